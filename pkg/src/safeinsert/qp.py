"""Small dense convex QP solver: ``min 1/2 x'Px + q'x  s.t.  l <= Ax <= u``.

Operator splitting (relaxed ADMM, OSQP-style) produces a primal/dual estimate;
every ``polish_every`` iterations the active set implied by the duals is
solved exactly and accepted if it passes a KKT check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _core

SOLVED = "solved"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class QPResult:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    polished: bool
    primal_residual: float

    def objective(self, P, q) -> float:
        return float(0.5 * self.x @ P @ self.x + q @ self.x)


def kkt_residual(P, q, A, l, u, x, y) -> float:
    """Max of stationarity, primal violation and complementarity violations."""
    Ax = A @ x
    stat = np.max(np.abs(P @ x + q + A.T @ y), initial=0.0)
    prim = np.max(np.maximum(l - Ax, 0.0) + np.maximum(Ax - u, 0.0), initial=0.0)
    # y_i < 0 only at the lower bound, y_i > 0 only at the upper bound
    comp_lo = np.max(np.abs(np.minimum(y, 0.0) * (Ax - l)), initial=0.0)
    comp_hi = np.max(np.abs(np.maximum(y, 0.0) * (u - Ax)), initial=0.0)
    return float(max(stat, prim, comp_lo, comp_hi))


def _polish(P, q, A, l, u, z, y, eq, tol):
    lo = ((z - l) < -y) | eq
    hi = ((u - z) < y) & ~eq
    act = lo | hi
    n = P.shape[0]
    Aa = A[act]
    b = np.where(hi[act], u[act], l[act])
    k = Aa.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = Aa.T
    K[n:, :n] = Aa
    rhs = np.concatenate([-q, b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x = sol[:n]
    ya = sol[n:]
    yfull = np.zeros(A.shape[0])
    yfull[act] = ya
    Ax = A @ x
    scale = np.maximum(1.0, np.maximum(np.abs(l), np.abs(u)))
    scale = np.where(np.isfinite(scale), scale, 1.0)
    if np.any(Ax < l - tol * scale) or np.any(Ax > u + tol * scale):
        return None
    ineq_lo = lo & ~eq
    if np.any(yfull[ineq_lo] > tol) or np.any(yfull[hi] < -tol):
        return None
    if np.max(np.abs(P @ x + q + A.T @ yfull), initial=0.0) > 1e-9:
        return None
    return x, yfull


def solve_qp(
    P,
    q,
    A,
    l,
    u,
    eps: float = 1e-9,
    max_iter: int = 10_000,
    polish_every: int = 25,
    rho: float = 0.1,
    sigma: float = 1e-6,
    alpha: float = 1.6,
    polish_tol: float = 1e-11,
    infeasible_residual: float = 1e-6,
) -> QPResult:
    P = np.ascontiguousarray(P, dtype=float)
    q = np.ascontiguousarray(q, dtype=float)
    A = np.ascontiguousarray(np.atleast_2d(A), dtype=float).reshape(-1, P.shape[0])
    l = np.asarray(l, dtype=float).copy()
    u = np.asarray(u, dtype=float).copy()
    n, m = P.shape[0], A.shape[0]

    # unit infinity-norm rows
    rn = np.max(np.abs(A), axis=1) if m else np.zeros(0)
    rn[rn == 0.0] = 1.0
    D = 1.0 / rn
    As = np.ascontiguousarray(A * D[:, None])
    ls, us = l * D, u * D
    eq = np.abs(us - ls) <= 1e-14 * np.maximum(1.0, np.abs(us))
    rho_v = np.where(eq, 1e3 * rho, rho)

    x = np.zeros(n)
    z = np.clip(np.zeros(m), ls, us)
    y = np.zeros(m)
    total = 0
    status = MAX_ITER
    while total < max_iter:
        chunk = min(polish_every, max_iter - total)
        it, st = _core.admm_qp(P, q, As, ls, us, rho_v, sigma, alpha, eps, 0.0, 1e-6, chunk, x, z, y)
        total += it
        if st == 2:
            status = INFEASIBLE
            break
        pol = _polish(P, q, As, ls, us, z, y, eq, polish_tol)
        if pol is not None:
            xp, yp = pol
            return QPResult(xp, yp * D, SOLVED, total, True, 0.0)
        if st == 0:
            status = SOLVED
            break
    r_prim = float(np.max(np.abs(As @ x - z), initial=0.0))
    viol = float(np.max(np.maximum(ls - As @ x, 0.0) + np.maximum(As @ x - us, 0.0), initial=0.0))
    if status == MAX_ITER and max(r_prim, viol) > infeasible_residual:
        status = INFEASIBLE
    elif status == MAX_ITER:
        status = SOLVED
    return QPResult(x.copy(), y * D, status, total, False, max(r_prim, viol))
