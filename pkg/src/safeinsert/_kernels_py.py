"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve


def dh_frames(dh, q, base, tool):
    n = dh.shape[0]
    out = np.empty((n + 2, 4, 4))
    out[0] = base
    for i in range(n):
        a, alpha, d, offset = dh[i]
        th = q[i] + offset
        ct, st = math.cos(th), math.sin(th)
        ca, sa = math.cos(alpha), math.sin(alpha)
        A = np.array(
            [
                [ct, -st * ca, st * sa, a * ct],
                [st, ct * ca, -ct * sa, a * st],
                [0.0, sa, ca, d],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        out[i + 1] = out[i] @ A
    out[n + 1] = out[n] @ tool
    return out


def _mask(cx, cy, goals, defects, clearance):
    off = np.array([cx, cy]) - goals  # (n, 2)
    d = off[:, None, :] + defects  # (n, P, 2)
    return np.all(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] <= clearance * clearance, axis=1)


def feasible_mask(cx, cy, goals, defects, clearance):
    return _mask(cx, cy, goals, defects, clearance)


def feasible_fitness(cands, goals, defects, weights, clearance):
    out = np.empty(cands.shape[0])
    for j in range(cands.shape[0]):
        ok = _mask(cands[j, 0], cands[j, 1], goals, defects, clearance)
        out[j] = math.fsum(weights[ok])
    return out


def admm_qp(P, q, A, l, u, rho, sigma, alpha, eps_abs, eps_rel, eps_pinf, max_iter, x, z, y):
    if max_iter <= 0:
        return 0, 1
    n = P.shape[0]
    K = P + A.T @ (rho[:, None] * A) + sigma * np.eye(n)
    try:
        factor = cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("ADMM system matrix is not positive definite") from exc
    nq = np.max(np.abs(q)) if n else 0.0
    status = 1
    it = 0
    for it in range(max_iter):
        xt = cho_solve(factor, sigma * x - q + A.T @ (rho * z - y))
        zt = A @ xt
        x[:] = alpha * xt + (1.0 - alpha) * x
        zr = alpha * zt + (1.0 - alpha) * z
        zn = np.clip(zr + y / rho, l, u)
        dy = rho * (zr - zn)
        y += dy
        z[:] = zn

        Ax = A @ x
        r_prim = np.max(np.abs(Ax - z))
        Px = P @ x
        Aty = A.T @ y
        r_dual = np.max(np.abs(Px + q + Aty))
        e_prim = eps_abs + eps_rel * max(np.max(np.abs(Ax)), np.max(np.abs(z)))
        e_dual = eps_abs + eps_rel * max(np.max(np.abs(Px)), np.max(np.abs(Aty)), nq)
        if r_prim <= e_prim and r_dual <= e_dual:
            status = 0
            break
        ndy = np.max(np.abs(dy))
        if ndy > 0.0:
            pos, neg = dy > 0.0, dy < 0.0
            supp = float(u[pos] @ dy[pos] + l[neg] @ dy[neg])
            if np.max(np.abs(A.T @ dy)) <= eps_pinf * ndy and supp <= -eps_pinf * ndy:
                status = 2
                break
    return it + 1, status
