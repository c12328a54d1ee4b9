"""The compiled kernels and the numpy fallback agree."""
import subprocess
import sys

import numpy as np
import pytest

from safeinsert import _core, _kernels_py
from safeinsert import qp as qp_mod
from safeinsert.kinematics import reference_arm
from safeinsert.occt import OcctParams, axis_qp

compiled = pytest.importorskip("safeinsert._kernels")


def test_dh_frames(rng):
    arm = reference_arm()
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 6)
        a = compiled.dh_frames(arm.dh, q, arm.base, arm.tool)
        b = _kernels_py.dh_frames(arm.dh, q, arm.base, arm.tool)
        assert np.allclose(a, b, atol=1e-14, rtol=0)


def test_feasibility_kernels(rng):
    goals = np.ascontiguousarray(rng.normal(0, 3e-4, (400, 2)))
    defects = np.ascontiguousarray(rng.normal(0, 1e-4, (400, 8, 2)))
    w = rng.random(400)
    w /= w.sum()
    cands = np.ascontiguousarray(rng.normal(0, 3e-4, (30, 2)))
    for c in cands:
        assert np.array_equal(compiled.feasible_mask(c[0], c[1], goals, defects, 2e-4),
                              _kernels_py.feasible_mask(c[0], c[1], goals, defects, 2e-4))
    a = compiled.feasible_fitness(cands, goals, defects, w, 2e-4)
    b = _kernels_py.feasible_fitness(cands, goals, defects, w, 2e-4)
    assert np.allclose(a, b, atol=1e-15, rtol=0)


@pytest.mark.parametrize("x0,v0", [(0.01, 0.0), (-0.015, 0.002), (0.004, -0.01)])
def test_admm_qp(monkeypatch, x0, v0):
    P, q, _, A, l, u = axis_qp(OcctParams(), x0, v0)
    results = []
    for impl in (compiled, _kernels_py):
        monkeypatch.setattr(_core, "admm_qp", impl.admm_qp)
        results.append(qp_mod.solve_qp(P, q, A, l, u))
    a, b = results
    assert a.status == b.status
    assert np.allclose(a.x, b.x, atol=1e-10, rtol=0)


def test_infeasibility_with_infinite_bounds(monkeypatch):
    P = np.eye(1)
    A = np.array([[1.0], [1.0]])
    for impl in (compiled, _kernels_py):
        monkeypatch.setattr(_core, "admm_qp", impl.admm_qp)
        res = qp_mod.solve_qp(P, np.zeros(1), A, [1.0, -np.inf], [np.inf, -1.0], max_iter=2000)
        assert res.status == qp_mod.INFEASIBLE


def test_env_var_forces_fallback():
    code = "import safeinsert._core as c; print(c.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"SAFEINSERT_PURE_PYTHON": "1", "PATH": ""}, check=True)
    assert out.stdout.strip() == "python"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env={"PATH": ""}, check=True)
    assert out.stdout.strip() == "compiled"
