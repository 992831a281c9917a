# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 sweeps; same contracts as :mod:`dkf_ode._pykernels`."""

import numpy as np
from libc.math cimport isfinite
from libc.string cimport memcpy


cdef inline Py_ssize_t _ix(Py_ssize_t n, Py_ssize_t i) noexcept nogil:
    return 0 if n == 1 else i


cdef void _ric_rhs(const double* A, const double* r, const double* g, double zz,
                   const double* CtC, const double* y, double il, int d,
                   double* dy) noexcept nogil:
    # y = [E (d*d, row major), h (d), acc (3)]
    cdef const double* E = y
    cdef const double* h = y + d * d
    cdef double* dE = dy
    cdef double* dh = dy + d * d
    cdef double* dacc = dy + d * d + d
    cdef int i, j, k
    cdef double s, rh, hh
    for i in range(d):
        for j in range(i, d):
            s = CtC[i * d + j]
            for k in range(d):
                s -= A[k * d + i] * E[k * d + j] + E[i * d + k] * A[k * d + j] + il * E[i * d + k] * E[k * d + j]
            dE[i * d + j] = s
            dE[j * d + i] = s
    rh = 0.0
    hh = 0.0
    for i in range(d):
        s = -g[i]
        for k in range(d):
            s -= A[k * d + i] * h[k] + il * E[i * d + k] * h[k] + E[i * d + k] * r[k]
        dh[i] = s
        rh += r[i] * h[i]
        hh += h[i] * h[i]
    dacc[0] = zz
    dacc[1] = rh
    dacc[2] = hh


cdef void _sens_rhs(const double* A, const double* dA, const double* r, const double* dr,
                    const double* g, double zz, const double* CtC, const double* y,
                    double il, int d, int p, double* dy) noexcept nogil:
    # y = [E, h, acc(3), Es (p*d*d), hs (p*d), gacc (p)]
    cdef int dd = d * d
    cdef int base = dd + d + 3
    cdef const double* E = y
    cdef const double* h = y + dd
    cdef const double* Es
    cdef const double* hs
    cdef const double* dAj
    cdef double* dEs
    cdef double* dhs
    cdef int i, j, k, q
    cdef double s, t1, t2
    _ric_rhs(A, r, g, zz, CtC, y, il, d, dy)
    for q in range(p):
        Es = y + base + q * dd
        hs = y + base + p * dd + q * d
        dAj = dA + q * dd
        dEs = dy + base + q * dd
        dhs = dy + base + p * dd + q * d
        for i in range(d):
            for j in range(i, d):
                s = 0.0
                for k in range(d):
                    # dA^T E + E dA + A^T Es + Es A + (E Es + Es E) / lam
                    s += dAj[k * d + i] * E[k * d + j] + E[i * d + k] * dAj[k * d + j]
                    s += A[k * d + i] * Es[k * d + j] + Es[i * d + k] * A[k * d + j]
                    s += il * (E[i * d + k] * Es[k * d + j] + Es[i * d + k] * E[k * d + j])
                dEs[i * d + j] = -s
                dEs[j * d + i] = -s
        t1 = 0.0
        for i in range(d):
            s = 0.0
            for k in range(d):
                s += dAj[k * d + i] * h[k] + il * Es[i * d + k] * h[k]
                s += A[k * d + i] * hs[k] + il * E[i * d + k] * hs[k]
                s += Es[i * d + k] * r[k] + E[i * d + k] * dr[k * p + q]
            dhs[i] = -s
            t1 += dr[i * p + q] * h[i] + r[i] * hs[i] + il * h[i] * hs[i]
        dy[base + p * dd + p * d + q] = -2.0 * t1


cdef void _symmetrize(double* E, int d) noexcept nogil:
    cdef int i, j
    cdef double m
    for i in range(d):
        for j in range(i + 1, d):
            m = 0.5 * (E[i * d + j] + E[j * d + i])
            E[i * d + j] = m
            E[j * d + i] = m


cdef bint _all_finite(const double* y, int n) noexcept nogil:
    cdef int i
    for i in range(n):
        if not isfinite(y[i]):
            return False
    return True


def riccati_sweep(const double[:, :, ::1] A_half, const double[:, ::1] r_half,
                  const double[:, ::1] CtC, const double[:, ::1] g_half,
                  const double[::1] zz_half, const double[:, ::1] Q0, double lam,
                  const double[::1] dts):
    cdef Py_ssize_t N = dts.shape[0]
    cdef int d = CtC.shape[0]
    cdef int dd = d * d
    cdef int n = dd + d + 3
    cdef double il = 1.0 / lam
    cdef Py_ssize_t nA = A_half.shape[0], nr = r_half.shape[0]
    cdef Py_ssize_t ng = g_half.shape[0], nz = zz_half.shape[0]
    E_out = np.empty((N + 1, d, d))
    h_out = np.empty((N + 1, d))
    acc_out = np.empty((N + 1, 3))
    dE_out = np.empty((N + 1, d, d))
    dh_out = np.empty((N + 1, d))
    cdef double[:, :, ::1] Ev = E_out
    cdef double[:, ::1] hv = h_out
    cdef double[:, ::1] av = acc_out
    cdef double[:, :, ::1] dEv = dE_out
    cdef double[:, ::1] dhv = dh_out
    work = np.zeros((6, n))
    cdef double[:, ::1] w = work
    cdef double* y = &w[0, 0]
    cdef double* k1 = &w[1, 0]
    cdef double* k2 = &w[2, 0]
    cdef double* k3 = &w[3, 0]
    cdef double* k4 = &w[4, 0]
    cdef double* ys = &w[5, 0]
    cdef Py_ssize_t k, im, i
    cdef int c
    cdef double dt, hdt
    cdef Py_ssize_t bad = -1
    for i in range(d):
        for c in range(d):
            y[i * d + c] = Q0[i, c]
    with nogil:
        memcpy(&Ev[0, 0, 0], y, dd * sizeof(double))
        memcpy(&hv[0, 0], y + dd, d * sizeof(double))
        memcpy(&av[0, 0], y + dd + d, 3 * sizeof(double))
        for k in range(N):
            dt = dts[k]
            hdt = 0.5 * dt
            i = 2 * k
            im = i + 1
            _ric_rhs(&A_half[_ix(nA, i), 0, 0], &r_half[_ix(nr, i), 0], &g_half[_ix(ng, i), 0],
                     zz_half[_ix(nz, i)], &CtC[0, 0], y, il, d, k1)
            memcpy(&dEv[k, 0, 0], k1, dd * sizeof(double))
            memcpy(&dhv[k, 0], k1 + dd, d * sizeof(double))
            for c in range(n):
                ys[c] = y[c] + hdt * k1[c]
            _ric_rhs(&A_half[_ix(nA, im), 0, 0], &r_half[_ix(nr, im), 0], &g_half[_ix(ng, im), 0],
                     zz_half[_ix(nz, im)], &CtC[0, 0], ys, il, d, k2)
            for c in range(n):
                ys[c] = y[c] + hdt * k2[c]
            _ric_rhs(&A_half[_ix(nA, im), 0, 0], &r_half[_ix(nr, im), 0], &g_half[_ix(ng, im), 0],
                     zz_half[_ix(nz, im)], &CtC[0, 0], ys, il, d, k3)
            for c in range(n):
                ys[c] = y[c] + dt * k3[c]
            _ric_rhs(&A_half[_ix(nA, im + 1), 0, 0], &r_half[_ix(nr, im + 1), 0],
                     &g_half[_ix(ng, im + 1), 0], zz_half[_ix(nz, im + 1)], &CtC[0, 0],
                     ys, il, d, k4)
            for c in range(n):
                y[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
            _symmetrize(y, d)
            if not _all_finite(y, n):
                bad = k + 1
                break
            memcpy(&Ev[k + 1, 0, 0], y, dd * sizeof(double))
            memcpy(&hv[k + 1, 0], y + dd, d * sizeof(double))
            memcpy(&av[k + 1, 0], y + dd + d, 3 * sizeof(double))
        if bad < 0:
            i = 2 * N
            _ric_rhs(&A_half[_ix(nA, i), 0, 0], &r_half[_ix(nr, i), 0], &g_half[_ix(ng, i), 0],
                     zz_half[_ix(nz, i)], &CtC[0, 0], y, il, d, k1)
            memcpy(&dEv[N, 0, 0], k1, dd * sizeof(double))
            memcpy(&dhv[N, 0], k1 + dd, d * sizeof(double))
    if bad >= 0:
        E_out[bad:] = np.nan
        h_out[bad:] = np.nan
        acc_out[bad:] = np.nan
        dE_out[bad - 1:] = np.nan
        dh_out[bad - 1:] = np.nan
    return E_out, h_out, acc_out, dE_out, dh_out, bad


def sensitivity_sweep(const double[:, :, ::1] A_half, const double[:, :, :, ::1] dA_half,
                      const double[:, ::1] r_half, const double[:, :, ::1] dr_half,
                      const double[:, ::1] CtC, const double[:, ::1] g_half,
                      const double[::1] zz_half, const double[:, ::1] Q0, double lam,
                      const double[::1] dts, bint store):
    cdef Py_ssize_t N = dts.shape[0]
    cdef int d = CtC.shape[0]
    cdef int p = dA_half.shape[1]
    cdef int dd = d * d
    cdef int base = dd + d + 3
    cdef int n = base + p * dd + p * d + p
    cdef double il = 1.0 / lam
    cdef Py_ssize_t nA = A_half.shape[0], ndA = dA_half.shape[0], nr = r_half.shape[0]
    cdef Py_ssize_t ndr = dr_half.shape[0], ng = g_half.shape[0], nz = zz_half.shape[0]
    work = np.zeros((6, n))
    cdef double[:, ::1] w = work
    cdef double* y = &w[0, 0]
    cdef double* k1 = &w[1, 0]
    cdef double* k2 = &w[2, 0]
    cdef double* k3 = &w[3, 0]
    cdef double* k4 = &w[4, 0]
    cdef double* ys = &w[5, 0]
    cdef Py_ssize_t k, i, ii
    cdef int c, q
    cdef double dt, hdt
    cdef Py_ssize_t bad = -1
    cdef Py_ssize_t NP = N + 1 if store else 1
    Ep = np.empty((NP, d, d))
    hp = np.empty((NP, d))
    Esp = np.empty((NP, p, d, d))
    hsp = np.empty((NP, p, d))
    cdef double[:, :, ::1] Epv = Ep
    cdef double[:, ::1] hpv = hp
    cdef double[:, :, :, ::1] Espv = Esp
    cdef double[:, :, ::1] hspv = hsp
    for i in range(d):
        for c in range(d):
            y[i * d + c] = Q0[i, c]
    with nogil:
        if store:
            memcpy(&Epv[0, 0, 0], y, dd * sizeof(double))
            memcpy(&hpv[0, 0], y + dd, d * sizeof(double))
            memcpy(&Espv[0, 0, 0, 0], y + base, p * dd * sizeof(double))
            memcpy(&hspv[0, 0, 0], y + base + p * dd, p * d * sizeof(double))
        for k in range(N):
            dt = dts[k]
            hdt = 0.5 * dt
            i = 2 * k
            _sens_rhs(&A_half[_ix(nA, i), 0, 0], &dA_half[_ix(ndA, i), 0, 0, 0],
                      &r_half[_ix(nr, i), 0], &dr_half[_ix(ndr, i), 0, 0],
                      &g_half[_ix(ng, i), 0], zz_half[_ix(nz, i)], &CtC[0, 0], y, il, d, p, k1)
            for c in range(n):
                ys[c] = y[c] + hdt * k1[c]
            ii = i + 1
            _sens_rhs(&A_half[_ix(nA, ii), 0, 0], &dA_half[_ix(ndA, ii), 0, 0, 0],
                      &r_half[_ix(nr, ii), 0], &dr_half[_ix(ndr, ii), 0, 0],
                      &g_half[_ix(ng, ii), 0], zz_half[_ix(nz, ii)], &CtC[0, 0], ys, il, d, p, k2)
            for c in range(n):
                ys[c] = y[c] + hdt * k2[c]
            _sens_rhs(&A_half[_ix(nA, ii), 0, 0], &dA_half[_ix(ndA, ii), 0, 0, 0],
                      &r_half[_ix(nr, ii), 0], &dr_half[_ix(ndr, ii), 0, 0],
                      &g_half[_ix(ng, ii), 0], zz_half[_ix(nz, ii)], &CtC[0, 0], ys, il, d, p, k3)
            for c in range(n):
                ys[c] = y[c] + dt * k3[c]
            ii = i + 2
            _sens_rhs(&A_half[_ix(nA, ii), 0, 0], &dA_half[_ix(ndA, ii), 0, 0, 0],
                      &r_half[_ix(nr, ii), 0], &dr_half[_ix(ndr, ii), 0, 0],
                      &g_half[_ix(ng, ii), 0], zz_half[_ix(nz, ii)], &CtC[0, 0], ys, il, d, p, k4)
            for c in range(n):
                y[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
            _symmetrize(y, d)
            for q in range(p):
                _symmetrize(y + base + q * dd, d)
            if not _all_finite(y, n):
                bad = k + 1
                break
            if store:
                memcpy(&Epv[k + 1, 0, 0], y, dd * sizeof(double))
                memcpy(&hpv[k + 1, 0], y + dd, d * sizeof(double))
                memcpy(&Espv[k + 1, 0, 0, 0], y + base, p * dd * sizeof(double))
                memcpy(&hspv[k + 1, 0, 0], y + base + p * dd, p * d * sizeof(double))
    state = work[0]
    E_T = state[:dd].reshape(d, d).copy()
    h_T = state[dd:dd + d].copy()
    acc_T = state[dd + d:base].copy()
    Es_T = state[base:base + p * dd].reshape(p, d, d).copy()
    hs_T = state[base + p * dd:base + p * dd + p * d].reshape(p, d).copy()
    g_T = state[base + p * dd + p * d:].copy()
    paths = (Ep, hp, Esp, hsp) if store else None
    return E_T, h_T, acc_T, Es_T, hs_T, g_T, paths, bad


def linear_sweep(const double[:, :, ::1] M_half, const double[:, :, ::1] B_half,
                 const double[:, ::1] Z0, const double[::1] dts):
    cdef Py_ssize_t N = dts.shape[0]
    cdef int D = Z0.shape[0]
    cdef int m = Z0.shape[1]
    cdef int n = D * m
    cdef Py_ssize_t nM = M_half.shape[0], nB = B_half.shape[0]
    out = np.empty((N + 1, D, m))
    cdef double[:, :, ::1] ov = out
    work = np.zeros((6, n))
    cdef double[:, ::1] w = work
    cdef double* z = &w[0, 0]
    cdef double* k1 = &w[1, 0]
    cdef double* k2 = &w[2, 0]
    cdef double* k3 = &w[3, 0]
    cdef double* k4 = &w[4, 0]
    cdef double* zs = &w[5, 0]
    cdef Py_ssize_t k, i
    cdef int a, b, c, stage
    cdef double dt, s, coef
    cdef const double* M
    cdef const double* B
    cdef const double* src
    cdef double* dst
    cdef Py_ssize_t bad = -1
    for a in range(D):
        for b in range(m):
            z[a * m + b] = Z0[a, b]
    with nogil:
        memcpy(&ov[0, 0, 0], z, n * sizeof(double))
        for k in range(N):
            dt = dts[k]
            for stage in range(4):
                if stage == 0:
                    i = 2 * k
                    src = z
                    dst = k1
                elif stage == 1:
                    i = 2 * k + 1
                    for c in range(n):
                        zs[c] = z[c] + 0.5 * dt * k1[c]
                    src = zs
                    dst = k2
                elif stage == 2:
                    i = 2 * k + 1
                    for c in range(n):
                        zs[c] = z[c] + 0.5 * dt * k2[c]
                    src = zs
                    dst = k3
                else:
                    i = 2 * k + 2
                    for c in range(n):
                        zs[c] = z[c] + dt * k3[c]
                    src = zs
                    dst = k4
                M = &M_half[_ix(nM, i), 0, 0]
                B = &B_half[_ix(nB, i), 0, 0]
                for a in range(D):
                    for b in range(m):
                        s = B[a * m + b]
                        for c in range(D):
                            s += M[a * D + c] * src[c * m + b]
                        dst[a * m + b] = s
            coef = dt / 6.0
            for c in range(n):
                z[c] += coef * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
            if not _all_finite(z, n):
                bad = k + 1
                break
            memcpy(&ov[k + 1, 0, 0], z, n * sizeof(double))
    if bad >= 0:
        out[bad:] = np.nan
    return out, bad
