"""Pure-numpy reference implementation of the RK4 sweeps.

Every sweep walks a grid of ``N`` steps. Time-dependent inputs are sampled on
the ``2N + 1`` "half nodes" (node ``k`` at index ``2k``, the midpoint of step
``k`` at ``2k + 1``); an input whose leading axis has length 1 is constant.
Each function returns its outputs followed by ``bad``, the index of the first
node with a non-finite state, or -1.
"""

import numpy as np


def _at(arr, i):
    return arr[0] if arr.shape[0] == 1 else arr[i]


def _ric_rhs(A, r, g, zz, E, h, CtC, il):
    EA = E @ A
    dE = CtC - EA.T - EA - il * (E @ E)
    dh = -(A.T @ h) - il * (E @ h) - g - E @ r
    return dE, dh, np.array([zz, r @ h, h @ h])


def riccati_sweep(A_half, r_half, CtC, g_half, zz_half, Q0, lam, dts):
    N = dts.shape[0]
    d = CtC.shape[0]
    il = 1.0 / lam
    E_out = np.empty((N + 1, d, d))
    h_out = np.empty((N + 1, d))
    acc_out = np.empty((N + 1, 3))
    dE_out = np.empty((N + 1, d, d))
    dh_out = np.empty((N + 1, d))
    E = np.array(Q0, dtype=float)
    h = np.zeros(d)
    acc = np.zeros(3)
    E_out[0], h_out[0], acc_out[0] = E, h, acc
    bad = -1

    def f(i, E_, h_):
        return _ric_rhs(_at(A_half, i), _at(r_half, i), _at(g_half, i), _at(zz_half, i), E_, h_, CtC, il)

    for k in range(N):
        dt = dts[k]
        i0, im, i1 = 2 * k, 2 * k + 1, 2 * k + 2
        k1 = f(i0, E, h)
        dE_out[k], dh_out[k] = k1[0], k1[1]
        k2 = f(im, E + 0.5 * dt * k1[0], h + 0.5 * dt * k1[1])
        k3 = f(im, E + 0.5 * dt * k2[0], h + 0.5 * dt * k2[1])
        k4 = f(i1, E + dt * k3[0], h + dt * k3[1])
        w = dt / 6.0
        E = E + w * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        h = h + w * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        acc = acc + w * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        E = 0.5 * (E + E.T)
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(h)) and np.all(np.isfinite(acc))):
            bad = k + 1
            E_out[k + 1:] = np.nan
            h_out[k + 1:] = np.nan
            acc_out[k + 1:] = np.nan
            dE_out[k:] = np.nan
            dh_out[k:] = np.nan
            return E_out, h_out, acc_out, dE_out, dh_out, bad
        E_out[k + 1], h_out[k + 1], acc_out[k + 1] = E, h, acc
    kl = f(2 * N, E, h)
    dE_out[N], dh_out[N] = kl[0], kl[1]
    return E_out, h_out, acc_out, dE_out, dh_out, bad


def _sens_rhs(A, dA, r, dr, g, zz, E, h, Es, hs, CtC, il):
    dE, dh, dacc = _ric_rhs(A, r, g, zz, E, h, CtC, il)
    # per-parameter blocks; dA has shape (p, d, d), dr (d, p)
    EdA = E @ dA
    EsA = Es @ A
    EEs = E @ Es
    dEs = -(EdA.transpose(0, 2, 1) + EdA) - (EsA.transpose(0, 2, 1) + EsA) - il * (EEs + EEs.transpose(0, 2, 1))
    dhs = (
        -np.einsum("pki,k->pi", dA, h)
        - il * (Es @ h)
        - hs @ A
        - il * (hs @ E)
        - Es @ r
        - (E @ dr).T
    )
    dg = -2.0 * (dr.T @ h) - 2.0 * (hs @ r) - 2.0 * il * (hs @ h)
    return dE, dh, dacc, dEs, dhs, dg


def sensitivity_sweep(A_half, dA_half, r_half, dr_half, CtC, g_half, zz_half, Q0, lam, dts, store):
    N = dts.shape[0]
    d = CtC.shape[0]
    p = dA_half.shape[1]
    il = 1.0 / lam
    E = np.array(Q0, dtype=float)
    h = np.zeros(d)
    acc = np.zeros(3)
    Es = np.zeros((p, d, d))
    hs = np.zeros((p, d))
    gacc = np.zeros(p)
    paths = None
    if store:
        paths = (
            np.empty((N + 1, d, d)),
            np.empty((N + 1, d)),
            np.empty((N + 1, p, d, d)),
            np.empty((N + 1, p, d)),
        )
        paths[0][0], paths[1][0], paths[2][0], paths[3][0] = E, h, Es, hs

    def f(i, y):
        return _sens_rhs(
            _at(A_half, i), _at(dA_half, i), _at(r_half, i), _at(dr_half, i),
            _at(g_half, i), _at(zz_half, i), *y, CtC, il,
        )

    bad = -1
    for k in range(N):
        dt = dts[k]
        y = (E, h, Es, hs)
        k1 = f(2 * k, y)
        k2 = f(2 * k + 1, tuple(a + 0.5 * dt * b for a, b in zip(y, (k1[0], k1[1], k1[3], k1[4]))))
        k3 = f(2 * k + 1, tuple(a + 0.5 * dt * b for a, b in zip(y, (k2[0], k2[1], k2[3], k2[4]))))
        k4 = f(2 * k + 2, tuple(a + dt * b for a, b in zip(y, (k3[0], k3[1], k3[3], k3[4]))))
        w = dt / 6.0
        inc = [w * (a + 2 * b + 2 * c + e) for a, b, c, e in zip(k1, k2, k3, k4)]
        E = E + inc[0]
        h = h + inc[1]
        acc = acc + inc[2]
        Es = Es + inc[3]
        hs = hs + inc[4]
        gacc = gacc + inc[5]
        E = 0.5 * (E + E.T)
        Es = 0.5 * (Es + Es.transpose(0, 2, 1))
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(h)) and np.all(np.isfinite(Es)) and np.all(np.isfinite(hs))):
            bad = k + 1
            break
        if store:
            paths[0][k + 1], paths[1][k + 1], paths[2][k + 1], paths[3][k + 1] = E, h, Es, hs
    return E, h, acc, Es, hs, gacc, paths, bad


def linear_sweep(M_half, B_half, Z0, dts):
    N = dts.shape[0]
    Z = np.array(Z0, dtype=float)
    out = np.empty((N + 1,) + Z.shape)
    out[0] = Z
    for k in range(N):
        dt = dts[k]
        M0, Mm, M1 = _at(M_half, 2 * k), _at(M_half, 2 * k + 1), _at(M_half, 2 * k + 2)
        B0, Bm, B1 = _at(B_half, 2 * k), _at(B_half, 2 * k + 1), _at(B_half, 2 * k + 2)
        k1 = M0 @ Z + B0
        k2 = Mm @ (Z + 0.5 * dt * k1) + Bm
        k3 = Mm @ (Z + 0.5 * dt * k2) + Bm
        k4 = M1 @ (Z + dt * k3) + B1
        Z = Z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(Z)):
            out[k + 1:] = np.nan
            return out, k + 1
        out[k + 1] = Z
    return out, -1
