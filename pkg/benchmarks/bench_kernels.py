"""Time the compiled kernels against the numpy fallback.

Usage: ``python benchmarks/bench_kernels.py [--repeat N]``. Prints the median
wall time per call for each kernel and backend, and the speedup.
"""
import argparse
import statistics
import time

import numpy as np

from safeinsert import _core, _kernels_py
from safeinsert import qp as qp_mod
from safeinsert.kinematics import reference_arm
from safeinsert.occt import OcctParams, axis_qp

try:
    from safeinsert import _kernels as compiled
except ImportError:
    compiled = None


def median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(impl):
    rng = np.random.default_rng(0)
    arm = reference_arm()
    q = rng.uniform(-np.pi, np.pi, 6)
    goals = np.ascontiguousarray(rng.normal(0, 3e-4, (500, 2)))
    defects = np.ascontiguousarray(rng.normal(0, 1e-4, (500, 8, 2)))
    w = np.full(500, 1 / 500)
    cands = np.ascontiguousarray(rng.normal(0, 3e-4, (80, 2)))
    P, qv, _, A, l, u = axis_qp(OcctParams(), 0.015, 0.0)

    def admm():
        _core.admm_qp = impl.admm_qp
        qp_mod.solve_qp(P, qv, A, l, u)

    return {
        "dh_frames": lambda: impl.dh_frames(arm.dh, q, arm.base, arm.tool),
        "feasible_mask": lambda: impl.feasible_mask(1e-4, -1e-4, goals, defects, 2e-4),
        "feasible_fitness": lambda: impl.feasible_fitness(cands, goals, defects, w, 2e-4),
        "admm_qp (axis QP)": admm,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    original = _core.admm_qp
    py = {k: median_time(f, args.repeat) for k, f in cases(_kernels_py).items()}
    cy = {k: median_time(f, args.repeat) for k, f in cases(compiled).items()} if compiled else {}
    _core.admm_qp = original
    print(f"{'kernel':<20}{'python [ms]':>14}{'compiled [ms]':>16}{'speedup':>10}")
    for k, t in py.items():
        c = cy.get(k)
        extra = f"{c * 1e3:>16.4f}{t / c:>9.1f}x" if c else f"{'n/a':>16}{'':>10}"
        print(f"{k:<20}{t * 1e3:>14.4f}{extra}")


if __name__ == "__main__":
    main()
