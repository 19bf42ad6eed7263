# cython: language_level=3
"""Compiled RK4 kernels for the covariance and sensitivity ODEs.

Algorithmically identical to ``_kernels_py``; see that module for the
equations. Matrices are small (L x L with L rarely above 4), so every
product is an explicit triple loop over raw pointers.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite

cnp.import_array()

OK = 0
BLOWUP = 1

cdef enum:
    _OK = 0
    _BLOWUP = 1


cdef inline void _mm(const double* X, const double* Y, double* out, Py_ssize_t L) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(L):
        for j in range(L):
            acc = 0.0
            for k in range(L):
                acc = acc + X[i * L + k] * Y[k * L + j]
            out[i * L + j] = acc


cdef inline void _riccati_rhs(const double* A, const double* Q, const double* G, const double* Y,
                              double e, double c, double* t1, double* t2, double* out,
                              Py_ssize_t L) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double ay, ya
    _mm(Y, G, t1, L)
    _mm(t1, Y, t2, L)
    for i in range(L):
        for j in range(L):
            ay = 0.0
            ya = 0.0
            for k in range(L):
                ay = ay + A[i * L + k] * Y[k * L + j]
                ya = ya + Y[i * L + k] * A[j * L + k]
            out[i * L + j] = c * (ay + ya + Q[i * L + j] - e * t2[i * L + j])


def riccati_rk4(A, Q, G, eta, double h, double scale, omega0, double guard):
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef const double[:, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[::1] ev = np.ascontiguousarray(eta, dtype=np.float64)
    cdef Py_ssize_t L = Av.shape[0]
    cdef Py_ssize_t S = (ev.shape[0] - 1) // 2
    nodes = np.empty((S + 1, L, L))
    stages = np.empty((S, 3, L, L))
    cdef double[:, :, ::1] nv = nodes
    cdef double[:, :, :, ::1] sv = stages
    work = np.zeros((8, L * L))
    cdef double[:, ::1] wv = work
    cdef double* W = &wv[0, 0]
    cdef double* k1 = &wv[1, 0]
    cdef double* k2 = &wv[2, 0]
    cdef double* k3 = &wv[3, 0]
    cdef double* k4 = &wv[4, 0]
    cdef double* t1 = &wv[5, 0]
    cdef double* t2 = &wv[6, 0]
    cdef double* Y
    cdef const double* Ap = &Av[0, 0]
    cdef const double* Qp = &Qv[0, 0]
    cdef const double* Gp = &Gv[0, 0]
    cdef Py_ssize_t k, i, j, n = L * L
    cdef double e0, em, e1, nrm, s, hh = 0.5 * h, h6 = h / 6.0
    cdef int status = _OK
    cdef Py_ssize_t k_fail = S
    w0 = np.ascontiguousarray(omega0, dtype=np.float64)
    cdef const double[:, ::1] w0v = w0
    for i in range(L):
        for j in range(L):
            W[i * L + j] = w0v[i, j]
            nv[0, i, j] = w0v[i, j]
    with nogil:
        for k in range(S):
            e0 = ev[2 * k]
            em = ev[2 * k + 1]
            e1 = ev[2 * k + 2]
            _riccati_rhs(Ap, Qp, Gp, W, e0, scale, t1, t2, k1, L)
            Y = &sv[k, 0, 0, 0]
            for i in range(n):
                Y[i] = W[i] + hh * k1[i]
            _riccati_rhs(Ap, Qp, Gp, Y, em, scale, t1, t2, k2, L)
            Y = &sv[k, 1, 0, 0]
            for i in range(n):
                Y[i] = W[i] + hh * k2[i]
            _riccati_rhs(Ap, Qp, Gp, Y, em, scale, t1, t2, k3, L)
            Y = &sv[k, 2, 0, 0]
            for i in range(n):
                Y[i] = W[i] + h * k3[i]
            _riccati_rhs(Ap, Qp, Gp, Y, e1, scale, t1, t2, k4, L)
            for i in range(n):
                t1[i] = W[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            nrm = 0.0
            for i in range(L):
                for j in range(L):
                    s = 0.5 * (t1[i * L + j] + t1[j * L + i])
                    W[i * L + j] = s
                    nv[k + 1, i, j] = s
                    nrm = nrm + s * s
            nrm = sqrt(nrm)
            if not isfinite(nrm) or nrm > guard:
                status = _BLOWUP
                k_fail = k + 1
                break
    return nodes, stages, status, k_fail


cdef inline void _feedback(const double* A, const double* G, const double* Y, double e, double c,
                           double* t1, double* F, Py_ssize_t L) noexcept nogil:
    # F = c (A - e Y G)
    cdef Py_ssize_t i, n = L * L
    _mm(Y, G, t1, L)
    for i in range(n):
        F[i] = c * (A[i] - e * t1[i])


def homogeneous_rk4(A, G, eta, nodes, stages, double h, double scale):
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[::1] ev = np.ascontiguousarray(eta, dtype=np.float64)
    cdef const double[:, :, ::1] nv = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef const double[:, :, :, ::1] sv = np.ascontiguousarray(stages, dtype=np.float64)
    cdef Py_ssize_t L = Av.shape[0]
    cdef Py_ssize_t S = sv.shape[0]
    out = np.empty((S + 1, L, L))
    cdef double[:, :, ::1] ov = out
    work = np.zeros((8, L * L))
    cdef double[:, ::1] wv = work
    cdef double* X = &wv[0, 0]
    cdef double* F = &wv[1, 0]
    cdef double* m1 = &wv[2, 0]
    cdef double* m2 = &wv[3, 0]
    cdef double* m3 = &wv[4, 0]
    cdef double* m4 = &wv[5, 0]
    cdef double* t1 = &wv[6, 0]
    cdef double* Xt = &wv[7, 0]
    cdef const double* Ap = &Av[0, 0]
    cdef const double* Gp = &Gv[0, 0]
    cdef Py_ssize_t k, i, n = L * L
    cdef double hh = 0.5 * h, h6 = h / 6.0
    for i in range(L):
        X[i * L + i] = 1.0
    for i in range(n):
        (&ov[0, 0, 0])[i] = X[i]
    with nogil:
        for k in range(S):
            _feedback(Ap, Gp, &nv[k, 0, 0], ev[2 * k], scale, t1, F, L)
            _mm(F, X, m1, L)
            for i in range(n):
                Xt[i] = X[i] + hh * m1[i]
            _feedback(Ap, Gp, &sv[k, 0, 0, 0], ev[2 * k + 1], scale, t1, F, L)
            _mm(F, Xt, m2, L)
            for i in range(n):
                Xt[i] = X[i] + hh * m2[i]
            _feedback(Ap, Gp, &sv[k, 1, 0, 0], ev[2 * k + 1], scale, t1, F, L)
            _mm(F, Xt, m3, L)
            for i in range(n):
                Xt[i] = X[i] + h * m3[i]
            _feedback(Ap, Gp, &sv[k, 2, 0, 0], ev[2 * k + 2], scale, t1, F, L)
            _mm(F, Xt, m4, L)
            for i in range(n):
                X[i] = X[i] + h6 * (m1[i] + 2.0 * m2[i] + 2.0 * m3[i] + m4[i])
                (&ov[k + 1, 0, 0])[i] = X[i]
    return out


cdef inline void _lyap_rhs(const double* F, const double* Z, const double* P, const double* R,
                           double cde, double dT, double* out, Py_ssize_t L) noexcept nogil:
    # out = F Z + Z F' - cde P + dT R
    cdef Py_ssize_t i, j, k
    cdef double fz, zf
    for i in range(L):
        for j in range(L):
            fz = 0.0
            zf = 0.0
            for k in range(L):
                fz = fz + F[i * L + k] * Z[k * L + j]
                zf = zf + Z[i * L + k] * F[j * L + k]
            out[i * L + j] = fz + zf - cde * P[i * L + j] + dT * R[i * L + j]


def forced_rk4(A, Q, G, eta, deta, dT, nodes, stages, double h, double scale):
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef const double[:, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[::1] ev = np.ascontiguousarray(eta, dtype=np.float64)
    cdef const double[:, ::1] dev = np.ascontiguousarray(deta, dtype=np.float64)
    cdef const double[::1] dTv = np.ascontiguousarray(dT, dtype=np.float64)
    cdef const double[:, :, ::1] nv = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef const double[:, :, :, ::1] sv = np.ascontiguousarray(stages, dtype=np.float64)
    cdef Py_ssize_t L = Av.shape[0]
    cdef Py_ssize_t S = sv.shape[0]
    cdef Py_ssize_t D = dev.shape[0]
    out = np.zeros((D, S + 1, L, L))
    if D == 0:
        return out
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t n = L * L
    # per-stage F, P = W G W, R = A W + W A' + Q - eta P
    stage_mats = np.zeros((4, 3, n))
    cdef double[:, :, ::1] smv = stage_mats
    work = np.zeros((8, n))
    cdef double[:, ::1] wv = work
    cdef double* t1 = &wv[0, 0]
    cdef double* d1 = &wv[1, 0]
    cdef double* d2 = &wv[2, 0]
    cdef double* d3 = &wv[3, 0]
    cdef double* d4 = &wv[4, 0]
    cdef double* Zt = &wv[5, 0]
    cdef double* Zn = &wv[6, 0]
    cdef const double* Ap = &Av[0, 0]
    cdef const double* Qp = &Qv[0, 0]
    cdef const double* Gp = &Gv[0, 0]
    cdef const double* Y
    cdef double* Z
    cdef double e, hh = 0.5 * h, h6 = h / 6.0
    cdef double[4] es
    cdef Py_ssize_t[4] eidx
    cdef Py_ssize_t k, s, d, i, j
    with nogil:
        for k in range(S):
            eidx[0] = 2 * k
            eidx[1] = 2 * k + 1
            eidx[2] = 2 * k + 1
            eidx[3] = 2 * k + 2
            for s in range(4):
                if s == 0:
                    Y = &nv[k, 0, 0]
                else:
                    Y = &sv[k, s - 1, 0, 0]
                e = ev[eidx[s]]
                es[s] = e
                _feedback(Ap, Gp, Y, e, scale, t1, &smv[s, 0, 0], L)
                # P = (Y G) Y, t1 already holds Y G
                _mm(t1, Y, &smv[s, 1, 0], L)
                _riccati_rhs(Ap, Qp, Gp, Y, e, 1.0, t1, Zt, &smv[s, 2, 0], L)
            for d in range(D):
                Z = &ov[d, k, 0, 0]
                _lyap_rhs(&smv[0, 0, 0], Z, &smv[0, 1, 0], &smv[0, 2, 0],
                          scale * dev[d, eidx[0]], dTv[d], d1, L)
                for i in range(n):
                    Zt[i] = Z[i] + hh * d1[i]
                _lyap_rhs(&smv[1, 0, 0], Zt, &smv[1, 1, 0], &smv[1, 2, 0],
                          scale * dev[d, eidx[1]], dTv[d], d2, L)
                for i in range(n):
                    Zt[i] = Z[i] + hh * d2[i]
                _lyap_rhs(&smv[2, 0, 0], Zt, &smv[2, 1, 0], &smv[2, 2, 0],
                          scale * dev[d, eidx[2]], dTv[d], d3, L)
                for i in range(n):
                    Zt[i] = Z[i] + h * d3[i]
                _lyap_rhs(&smv[3, 0, 0], Zt, &smv[3, 1, 0], &smv[3, 2, 0],
                          scale * dev[d, eidx[3]], dTv[d], d4, L)
                for i in range(n):
                    Zn[i] = Z[i] + h6 * (d1[i] + 2.0 * d2[i] + 2.0 * d3[i] + d4[i])
                for i in range(L):
                    for j in range(L):
                        ov[d, k + 1, i, j] = 0.5 * (Zn[i * L + j] + Zn[j * L + i])
    return out


def tour_lengths(perms, bounds, dist):
    cdef const long[:, ::1] pv = np.ascontiguousarray(perms, dtype=np.int64)
    cdef const long[:, ::1] bv = np.ascontiguousarray(bounds, dtype=np.int64)
    cdef const double[:, ::1] dv = np.ascontiguousarray(dist, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0]
    cdef Py_ssize_t N = bv.shape[1] - 1
    out = np.zeros((n, N))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, a, b, m
    cdef double acc
    with nogil:
        for i in range(n):
            for j in range(N):
                a = bv[i, j]
                b = bv[i, j + 1]
                if b - a < 2:
                    continue
                acc = 0.0
                for m in range(a, b - 1):
                    acc = acc + dv[pv[i, m], pv[i, m + 1]]
                acc = acc + dv[pv[i, b - 1], pv[i, a]]
                ov[i, j] = acc
    return out
