"""Deterministic Kalman filter criterion for partially observed linear ODEs.

For a signal ``zeta`` on ``[0, T]`` the tracking cost

    x0' Q0 x0 + int_0^T ( |zeta - C X_{theta, x0, u}|^2 + lam |u|^2 ) dt

is minimized in closed form over the control ``u`` and the initial state
``x0``. The minimization runs forward in time through the Riccati matrix
``E`` and the adjoint vector ``h``:

    E' = C'C - A'E - EA - E^2 / lam,             E(0) = Q0
    h' = -(A' + E / lam) h - (C' zeta + E r),     h(0) = 0

The profiled cost is then

    S = int (|zeta|^2 - 2 r'h - |h|^2 / lam) dt - h(T)' E(T)^{-1} h(T)

and the optimal final state is ``-E(T)^{-1} h(T)``. The optimal trajectory is
recovered by integrating the closed loop backward from that final state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.integrate import simpson

from . import kernels
from .errors import DivergenceError, DomainError, ObservabilityError
from .integrate import TimeGrid, Trajectory, default_grid, resolvant

__all__ = [
    "AdjointPath",
    "CriterionValue",
    "ObservabilityReport",
    "PriorShiftedSignal",
    "SampledSignal",
    "SmoothedTrajectory",
    "apply_prior_mean",
    "criterion_S",
    "default_Q0",
    "final_state",
    "integrate_adjoint",
    "kalman_rank",
    "observability_gramian",
    "smooth_trajectory",
    "solve_final_state",
]

MAX_CONDITION = 1e12
GRAMIAN_TOL = 1e-10


class SampledSignal:
    """A signal evaluated once on the half nodes of a grid.

    Repeated criterion evaluations on the same grid (as in an optimizer loop)
    reuse the cached samples instead of re-evaluating the spline.
    """

    def __init__(self, signal: Callable, grid: TimeGrid):
        self.signal = signal
        self.grid = grid
        half = grid.half_nodes()
        vals = np.asarray(signal(half), dtype=float)
        self.half_values = vals.reshape(half.size, -1)

    def __call__(self, t):
        return self.signal(t)

    @property
    def node_values(self):
        return self.half_values[0::2]


def sample_signal(zeta, grid: TimeGrid) -> np.ndarray:
    """Values of ``zeta`` on the half nodes of ``grid``, shape ``(2N+1, d_obs)``."""
    if isinstance(zeta, SampledSignal) and zeta.grid is grid:
        return zeta.half_values
    half = grid.half_nodes()
    return np.asarray(zeta(half), dtype=float).reshape(half.size, -1)


def _signal_terms(zeta, grid, C):
    z = sample_signal(zeta, grid)
    if z.shape[1] != C.shape[0]:
        raise ValueError(f"signal has {z.shape[1]} channels, model observes {C.shape[0]}")
    return np.ascontiguousarray(z @ C), np.ascontiguousarray(np.sum(z * z, axis=1))


def _check_lambda(lam):
    lam = float(lam)
    if not (lam > 0 and np.isfinite(lam)):
        raise DomainError(f"penalty weight must be positive and finite, got {lam!r}")
    return lam


def _check_Q0(Q0, d):
    Q0 = np.zeros((d, d)) if Q0 is None else np.array(Q0, dtype=float).reshape(d, d)
    if not np.allclose(Q0, Q0.T, atol=1e-12 * (1 + np.abs(Q0).max())):
        raise DomainError("Q0 must be symmetric")
    if np.linalg.eigvalsh(Q0).min() < -1e-12 * (1 + np.abs(Q0).max()):
        raise DomainError("Q0 must be positive semidefinite")
    return np.ascontiguousarray(0.5 * (Q0 + Q0.T))


@dataclass(frozen=True)
class AdjointPath:
    """Riccati matrix ``E`` and adjoint ``h`` at every node, with time derivatives.

    ``integrals[k]`` holds the running integrals ``(int |zeta|^2, int r'h,
    int |h|^2)`` from 0 to node ``k``.
    """

    grid: TimeGrid
    E: np.ndarray
    h: np.ndarray
    dE: np.ndarray
    dh: np.ndarray
    integrals: np.ndarray
    lam: float
    Q0: np.ndarray
    theta: np.ndarray

    @property
    def E_T(self):
        return self.E[-1]

    @property
    def h_T(self):
        return self.h[-1]

    def half_values(self):
        """``(E, h)`` on the half nodes; midpoints by cubic Hermite interpolation."""
        dt = self.grid.steps
        out = []
        for y, dy in ((self.E, self.dE), (self.h, self.dh)):
            half = np.empty((2 * dt.size + 1,) + y.shape[1:])
            half[0::2] = y
            w = (dt / 8.0).reshape((-1,) + (1,) * (y.ndim - 1))
            half[1::2] = 0.5 * (y[:-1] + y[1:]) + w * (dy[:-1] - dy[1:])
            out.append(half)
        return out


def integrate_adjoint(model, theta, lam, Q0, zeta, grid: Optional[TimeGrid] = None) -> AdjointPath:
    """Forward RK4 of the Riccati and adjoint equations from ``(Q0, 0)``."""
    theta = model.check_theta(theta)
    lam = _check_lambda(lam)
    Q0 = _check_Q0(Q0, model.d)
    grid = default_grid(model.T) if grid is None else grid
    A, r = model.sample(theta, grid.half_nodes())
    g, zz = _signal_terms(zeta, grid, model.C)
    CtC = np.ascontiguousarray(model.C.T @ model.C)
    E, h, acc, dE, dh, bad = kernels.riccati_sweep(
        np.ascontiguousarray(A), np.ascontiguousarray(r), CtC, g, zz, Q0, lam, np.ascontiguousarray(grid.steps)
    )
    if bad >= 0:
        raise DivergenceError(
            f"Riccati solution blew up at node {bad} (t = {grid.nodes[bad]:.6g})",
            node=int(bad), time=float(grid.nodes[bad]),
        )
    E[0], h[0] = Q0, 0.0
    return AdjointPath(grid, E, h, dE, dh, acc, lam, Q0, theta)


def solve_final_state(E_T, h_T):
    """Return ``(-E_T^{-1} h_T, condition number of E_T)``.

    Raises :class:`ObservabilityError` when ``E_T`` is singular or its
    condition number exceeds ``1e12``.
    """
    E = 0.5 * (E_T + E_T.T)
    ev = np.abs(np.linalg.eigvalsh(E))
    cond = np.inf if ev.min() == 0 else ev.max() / ev.min()
    if not cond <= MAX_CONDITION:
        raise ObservabilityError(
            f"final Riccati matrix is singular or ill-conditioned (condition {cond:.3g}); "
            "the outputs do not determine the state: check observability or use Q0 > 0"
        )
    return -linalg.solve(E, h_T, assume_a="sym"), cond


def final_state(path: AdjointPath) -> np.ndarray:
    """Optimal final state ``-E(T)^{-1} h(T)``."""
    return solve_final_state(path.E_T, path.h_T)[0]


@dataclass(frozen=True)
class CriterionValue:
    S: float
    E_T: np.ndarray
    h_T: np.ndarray
    x_hat_T: np.ndarray
    condition_E_T: float
    lam: float
    theta: np.ndarray
    integral: float


def _criterion_from_parts(acc_T, E_T, h_T, lam):
    xT, cond = solve_final_state(E_T, h_T)
    integral = acc_T[0] - 2.0 * acc_T[1] - acc_T[2] / lam
    # -h' E^{-1} h = h' xT
    return integral + float(h_T @ xT), integral, xT, cond


def criterion_S(model, theta, lam, Q0, zeta, grid: Optional[TimeGrid] = None, path: Optional[AdjointPath] = None) -> CriterionValue:
    """Profiled cost of ``zeta`` at ``(theta, lam)``; pass ``path`` to reuse a sweep."""
    if path is None:
        path = integrate_adjoint(model, theta, lam, Q0, zeta, grid)
    S, integral, xT, cond = _criterion_from_parts(path.integrals[-1], path.E_T, path.h_T, path.lam)
    return CriterionValue(S, path.E_T.copy(), path.h_T.copy(), xT, cond, path.lam, path.theta, integral)


@dataclass(frozen=True)
class SmoothedTrajectory:
    """Optimal trajectory ``X``, optimal control ``u_bar`` and both endpoints."""

    grid: TimeGrid
    X: np.ndarray
    u_bar: np.ndarray
    x0_hat: np.ndarray
    xT_hat: np.ndarray


def smooth_trajectory(model, theta, lam, path: AdjointPath, zeta=None) -> SmoothedTrajectory:
    """Integrate ``x' = (A + E/lam) x + r + h/lam`` backward from ``-E(T)^{-1} h(T)``.

    ``zeta`` is accepted for symmetry with the other entry points; the signal
    already enters through ``path``.
    """
    theta = model.check_theta(theta)
    lam = _check_lambda(lam)
    grid = path.grid
    xT = final_state(path)
    A, r = model.sample(theta, grid.half_nodes())
    E_half, h_half = path.half_values()
    # reversed time s = T - t turns the final value problem into an initial one
    M = -(A + E_half / lam)[::-1]
    B = -(r + h_half / lam)[::-1]
    Z, bad = kernels.linear_sweep(
        np.ascontiguousarray(M),
        np.ascontiguousarray(B.reshape(-1, model.d, 1)),
        xT.reshape(-1, 1).copy(),
        np.ascontiguousarray(grid.steps[::-1]),
    )
    if bad >= 0:
        node = grid.n_steps - bad
        raise DivergenceError(f"backward pass diverged at node {node}", node=node, time=float(grid.nodes[node]))
    X = Z[::-1, :, 0].copy()
    X[-1] = xT
    u = (np.einsum("kij,kj->ki", path.E, X) + path.h) / lam
    return SmoothedTrajectory(grid, X, u, X[0].copy(), xT)


class PriorShiftedSignal:
    """``t -> zeta(t) - C Phi(t, 0) mu``.

    The homogeneous solution ``Phi(t, 0) mu`` is integrated on the half nodes
    of ``grid``; other times are served by cubic Hermite interpolation.
    """

    def __init__(self, zeta, model, theta, mu, grid: Optional[TimeGrid] = None):
        self.zeta = zeta
        self.model = model
        self.theta = model.check_theta(theta)
        self.mu = np.asarray(mu, dtype=float).reshape(model.d)
        grid = default_grid(model.T) if grid is None else grid
        fine = TimeGrid(grid.half_nodes())
        self.grid = grid
        self._fine = fine
        self._y = resolvant(model, self.theta, fine).values @ self.mu
        if model.is_autonomous:
            A = model.sample(self.theta, [0.0])[0][0]
            self._dy = self._y @ A.T
        else:
            A = np.array([model.A(t, self.theta) for t in fine.nodes])
            self._dy = np.einsum("kij,kj->ki", A, self._y)

    def _free(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        nodes = self._fine.nodes
        k = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 2)
        h = nodes[k + 1] - nodes[k]
        s = ((t - nodes[k]) / h)[:, None]
        h = h[:, None]
        y0, y1, d0, d1 = self._y[k], self._y[k + 1], self._dy[k], self._dy[k + 1]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1

    def __call__(self, t):
        base = np.asarray(self.zeta(t), dtype=float).reshape(np.atleast_1d(t).size, -1)
        return base - self._free(t) @ self.model.C.T


def apply_prior_mean(zeta, model, theta, mu, grid: Optional[TimeGrid] = None):
    """Shift ``zeta`` so the criterion penalizes ``(x0 - mu)' Q0 (x0 - mu)``.

    The minimizing initial state of the shifted problem is ``x0 - mu``.
    """
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)):
        raise DomainError("prior mean must be finite")
    if not np.any(mu):
        return zeta
    return PriorShiftedSignal(zeta, model, theta, mu, grid)


@dataclass(frozen=True)
class ObservabilityReport:
    gramian: np.ndarray
    min_eigenvalue: float
    max_eigenvalue: float
    kalman_rank: Optional[int]
    passes: bool


def observability_gramian(model, theta, T: Optional[float] = None, grid: Optional[TimeGrid] = None) -> ObservabilityReport:
    """``int_0^T Phi' C'C Phi dt`` by Simpson quadrature on the grid nodes."""
    theta = model.check_theta(theta)
    if grid is None:
        grid = default_grid(model.T if T is None else T)
    Phi = resolvant(model, theta, grid).values
    CPhi = np.einsum("ij,kjl->kil", model.C, Phi)
    integrand = np.einsum("kji,kjl->kil", CPhi, CPhi)
    O = simpson(integrand, x=grid.nodes, axis=0)
    O = 0.5 * (O + O.T)
    ev = np.linalg.eigvalsh(O)
    rank = None
    if model.is_autonomous:
        rank = kalman_rank(model.sample(theta, [0.0])[0][0], model.C)
    passes = bool(ev[-1] > 0 and ev[0] > GRAMIAN_TOL * ev[-1])
    return ObservabilityReport(O, float(ev[0]), float(ev[-1]), rank, passes)


def kalman_rank(A, C) -> int:
    """Numerical rank of the stacked matrix ``(C; CA; ...; CA^{d-1})``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = A.shape[0]
    blocks, M = [], C
    for _ in range(d):
        blocks.append(M)
        M = M @ A
    sv = np.linalg.svd(np.vstack(blocks), compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > d * np.finfo(float).eps * sv[0]))


def default_Q0(model, theta, grid: Optional[TimeGrid] = None) -> np.ndarray:
    """Zero when the Gramian is nonsingular, else a small multiple of the identity."""
    rep = observability_gramian(model, theta, grid=grid)
    if rep.passes:
        return np.zeros((model.d, model.d))
    scale = np.trace(rep.gramian) / model.d
    return (1e-6 * (scale if scale > 0 else 1.0)) * np.eye(model.d)
