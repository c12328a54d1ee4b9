# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics mirror ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, fabs

cnp.import_array()


def dh_frames(const double[:, ::1] dh, const double[::1] q, const double[:, ::1] base, const double[:, ::1] tool):
    cdef Py_ssize_t n = dh.shape[0]
    out_arr = np.empty((n + 2, 4, 4), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double A[4][4]
    cdef Py_ssize_t i, r, c, k
    cdef double th, ct, st, ca, sa, acc
    for r in range(4):
        for c in range(4):
            out[0, r, c] = base[r, c]
    for i in range(n):
        th = q[i] + dh[i, 3]
        ct = cos(th)
        st = sin(th)
        ca = cos(dh[i, 1])
        sa = sin(dh[i, 1])
        A[0][0] = ct; A[0][1] = -st * ca; A[0][2] = st * sa; A[0][3] = dh[i, 0] * ct
        A[1][0] = st; A[1][1] = ct * ca; A[1][2] = -ct * sa; A[1][3] = dh[i, 0] * st
        A[2][0] = 0.0; A[2][1] = sa; A[2][2] = ca; A[2][3] = dh[i, 2]
        A[3][0] = 0.0; A[3][1] = 0.0; A[3][2] = 0.0; A[3][3] = 1.0
        for r in range(4):
            for c in range(4):
                acc = 0.0
                for k in range(4):
                    acc = acc + out[i, r, k] * A[k][c]
                out[i + 1, r, c] = acc
    for r in range(4):
        for c in range(4):
            acc = 0.0
            for k in range(4):
                acc = acc + out[n, r, k] * tool[k, c]
            out[n + 1, r, c] = acc
    return out_arr


cdef inline bint _sample_feasible(double cx, double cy, const double[:, ::1] goals,
                                  const double[:, :, ::1] defects, Py_ssize_t s,
                                  double c2) nogil:
    cdef Py_ssize_t p
    cdef double dx, dy
    cdef double ox = cx - goals[s, 0]
    cdef double oy = cy - goals[s, 1]
    for p in range(defects.shape[1]):
        dx = ox + defects[s, p, 0]
        dy = oy + defects[s, p, 1]
        if dx * dx + dy * dy > c2:
            return False
    return True


def feasible_mask(double cx, double cy, const double[:, ::1] goals,
                  const double[:, :, ::1] defects, double clearance):
    cdef Py_ssize_t n = goals.shape[0], s
    out_arr = np.empty(n, dtype=np.bool_)
    cdef cnp.npy_bool[::1] out = out_arr
    cdef double c2 = clearance * clearance
    for s in range(n):
        out[s] = _sample_feasible(cx, cy, goals, defects, s, c2)
    return out_arr


def feasible_fitness(const double[:, ::1] cands, const double[:, ::1] goals,
                     const double[:, :, ::1] defects, const double[::1] weights,
                     double clearance):
    cdef Py_ssize_t m = cands.shape[0], n = goals.shape[0], j, s
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double c2 = clearance * clearance
    cdef double total, comp, t, w
    for j in range(m):
        # Neumaier compensated summation
        total = 0.0
        comp = 0.0
        for s in range(n):
            w = weights[s]
            if w == 0.0:
                continue
            if _sample_feasible(cands[j, 0], cands[j, 1], goals, defects, s, c2):
                t = total + w
                if fabs(total) >= fabs(w):
                    comp = comp + ((total - t) + w)
                else:
                    comp = comp + ((w - t) + total)
                total = t
        out[j] = total + comp
    return out_arr


cdef int _cholesky(double[:, ::1] K, Py_ssize_t n) nogil:
    # in-place lower Cholesky; returns -1 if not positive definite
    cdef Py_ssize_t i, j, k
    cdef double acc
    for j in range(n):
        acc = K[j, j]
        for k in range(j):
            acc = acc - K[j, k] * K[j, k]
        if acc <= 0.0:
            return -1
        K[j, j] = sqrt(acc)
        for i in range(j + 1, n):
            acc = K[i, j]
            for k in range(j):
                acc = acc - K[i, k] * K[j, k]
            K[i, j] = acc / K[j, j]
    return 0


cdef void _chol_solve(const double[:, ::1] L, double[::1] b, Py_ssize_t n) nogil:
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(n):
        acc = b[i]
        for k in range(i):
            acc = acc - L[i, k] * b[k]
        b[i] = acc / L[i, i]
    for i in range(n - 1, -1, -1):
        acc = b[i]
        for k in range(i + 1, n):
            acc = acc - L[k, i] * b[k]
        b[i] = acc / L[i, i]


def admm_qp(const double[:, ::1] P, const double[::1] q, const double[:, ::1] A,
            const double[::1] l, const double[::1] u, const double[::1] rho,
            double sigma, double alpha, double eps_abs, double eps_rel, double eps_pinf,
            Py_ssize_t max_iter, double[::1] x, double[::1] z, double[::1] y):
    """Run up to ``max_iter`` relaxed ADMM iterations in place on (x, z, y).

    Returns ``(iterations, status)`` with status 0 converged, 1 iteration cap,
    2 primal infeasibility certificate.
    """
    cdef Py_ssize_t n = P.shape[0], m = A.shape[0], i, j, k, it
    if max_iter <= 0:
        return 0, 1
    K_arr = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] K = K_arr
    cdef double acc
    for i in range(n):
        for j in range(n):
            acc = P[i, j]
            for k in range(m):
                acc = acc + A[k, i] * rho[k] * A[k, j]
            K[i, j] = acc
        K[i, i] = K[i, i] + sigma
    if _cholesky(K, n) != 0:
        raise ValueError("ADMM system matrix is not positive definite")

    cdef double[::1] rhs = np.empty(n)
    cdef double[::1] zt = np.empty(m)
    cdef double[::1] dy = np.empty(m)
    cdef double[::1] Ax = np.empty(m)
    cdef double[::1] Px = np.empty(n)
    cdef double[::1] Aty = np.empty(n)
    cdef double zr, zn, r_prim, r_dual, nAx, nz, nPx, nAty, nq, e_prim, e_dual
    cdef double ndy, nAtdy, supp, v
    cdef int status = 1
    nq = 0.0
    for i in range(n):
        if fabs(q[i]) > nq:
            nq = fabs(q[i])
    for it in range(max_iter):
        for i in range(n):
            acc = sigma * x[i] - q[i]
            for j in range(m):
                acc = acc + A[j, i] * (rho[j] * z[j] - y[j])
            rhs[i] = acc
        _chol_solve(K, rhs, n)
        for j in range(m):
            acc = 0.0
            for i in range(n):
                acc = acc + A[j, i] * rhs[i]
            zt[j] = acc
        for i in range(n):
            x[i] = alpha * rhs[i] + (1.0 - alpha) * x[i]
        for j in range(m):
            zr = alpha * zt[j] + (1.0 - alpha) * z[j]
            zn = zr + y[j] / rho[j]
            if zn < l[j]:
                zn = l[j]
            elif zn > u[j]:
                zn = u[j]
            dy[j] = rho[j] * (zr - zn)
            y[j] = y[j] + dy[j]
            z[j] = zn

        # residuals
        r_prim = 0.0
        nAx = 0.0
        nz = 0.0
        for j in range(m):
            acc = 0.0
            for i in range(n):
                acc = acc + A[j, i] * x[i]
            Ax[j] = acc
            if fabs(acc - z[j]) > r_prim:
                r_prim = fabs(acc - z[j])
            if fabs(acc) > nAx:
                nAx = fabs(acc)
            if fabs(z[j]) > nz:
                nz = fabs(z[j])
        r_dual = 0.0
        nPx = 0.0
        nAty = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc = acc + P[i, j] * x[j]
            Px[i] = acc
            acc = 0.0
            for j in range(m):
                acc = acc + A[j, i] * y[j]
            Aty[i] = acc
            v = fabs(Px[i] + q[i] + Aty[i])
            if v > r_dual:
                r_dual = v
            if fabs(Px[i]) > nPx:
                nPx = fabs(Px[i])
            if fabs(Aty[i]) > nAty:
                nAty = fabs(Aty[i])
        e_prim = eps_abs + eps_rel * (nAx if nAx > nz else nz)
        v = nPx if nPx > nAty else nAty
        if nq > v:
            v = nq
        e_dual = eps_abs + eps_rel * v
        if r_prim <= e_prim and r_dual <= e_dual:
            status = 0
            break
        # primal infeasibility certificate
        ndy = 0.0
        supp = 0.0
        for j in range(m):
            if fabs(dy[j]) > ndy:
                ndy = fabs(dy[j])
            if dy[j] > 0.0:
                supp = supp + u[j] * dy[j]
            elif dy[j] < 0.0:
                supp = supp + l[j] * dy[j]
        if ndy > 0.0:
            nAtdy = 0.0
            for i in range(n):
                acc = 0.0
                for j in range(m):
                    acc = acc + A[j, i] * dy[j]
                if fabs(acc) > nAtdy:
                    nAtdy = fabs(acc)
            if nAtdy <= eps_pinf * ndy and supp <= -eps_pinf * ndy:
                status = 2
                break
    return it + 1, status
