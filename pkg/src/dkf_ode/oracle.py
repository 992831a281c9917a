"""Brute-force minimization of the tracking cost by discretizing the control.

With ``u`` piecewise constant on ``N`` intervals, the state is affine in the
unknowns ``(x0, u_1, ..., u_N)``. The tracking cost then becomes a finite
linear least-squares problem whose global minimum is computed directly.
Nothing here uses the Riccati machinery, so the results certify it
independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.integrate import simpson

from .errors import DomainError, NonUniqueMinimumError
from .integrate import TimeGrid, control_on_half_nodes, duhamel_solution

__all__ = [
    "DiscretizedLQ",
    "OracleResult",
    "brute_force_fixed_x0",
    "brute_force_min",
    "discretize_lq",
    "lq_cost",
]

RANK_RTOL = 1e-10


def _psd_sqrt(Q):
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass(frozen=True)
class DiscretizedLQ:
    """Least-squares form of the tracking cost with a piecewise-constant control.

    ``cost(x0, u) = |design @ z - target|^2`` with ``z = (x0, u_1, ..., u_N)``,
    up to quadrature error on the fine grid.
    """

    N: int
    breaks: np.ndarray
    fine_times: np.ndarray
    design: np.ndarray
    target: np.ndarray
    state_map: np.ndarray
    state_offset: np.ndarray
    d: int

    def pack(self, x0, u) -> np.ndarray:
        return np.concatenate([np.asarray(x0, float).reshape(self.d), np.asarray(u, float).reshape(-1)])

    def cost(self, x0, u) -> float:
        res = self.design @ self.pack(x0, u) - self.target
        return float(res @ res)

    def states(self, z) -> np.ndarray:
        """State at every fine node for unknowns ``z``."""
        return self.state_offset + np.einsum("kdm,m->kd", self.state_map, z)


def discretize_lq(model, theta, lam, Q0, zeta, N: int, substeps: int = 8, T: Optional[float] = None) -> DiscretizedLQ:
    """Build the reduced least-squares problem.

    Each of the ``N`` control intervals gets ``substeps`` RK4 steps (rounded
    up to an even count); the data misfit is integrated by Simpson's rule on
    each interval.
    """
    theta = model.check_theta(theta)
    if not lam > 0:
        raise DomainError("penalty weight must be positive")
    d = model.d
    T = model.T if T is None else float(T)
    s = substeps + (substeps % 2)
    breaks = np.linspace(0.0, T, N + 1)
    dt = T / (N * s)
    m = 1 + d + d * N
    nodes = np.linspace(0.0, T, N * s + 1)

    # columns: particular solution (r), x0 basis, then u_k basis vectors
    Z = np.zeros((N * s + 1, d, m))
    Z[0, :, 1:1 + d] = np.eye(d)

    def system(t):
        A = np.asarray(model.A(t, theta), float).reshape(d, d)
        r = np.asarray(model.r(t, theta), float).reshape(d)
        return A, r

    z = Z[0].copy()
    i = 0
    for k in range(N):
        cols = slice(1 + d + d * k, 1 + d + d * (k + 1))
        for _ in range(s):
            t = nodes[i]
            pts = (t, t + 0.5 * dt, t + dt)
            sys = [system(p) for p in pts] if not model.is_autonomous or i == 0 else sys

            def f(j, y):
                A, r = sys[j]
                out = A @ y
                out[:, 0] += r
                out[:, cols] += np.eye(d)
                return out

            k1 = f(0, z)
            k2 = f(1, z + 0.5 * dt * k1)
            k3 = f(1, z + 0.5 * dt * k2)
            k4 = f(2, z + dt * k3)
            z = z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            i += 1
            Z[i] = z

    w = np.zeros(N * s + 1)
    simp = np.ones(s + 1)
    simp[1:-1:2], simp[2:-1:2] = 4.0, 2.0
    simp *= dt / 3.0
    for k in range(N):
        w[k * s:(k + 1) * s + 1] += simp

    zeta_vals = np.asarray(zeta(nodes), float).reshape(nodes.size, -1)
    C = model.C
    CZ = np.einsum("oi,kim->kom", C, Z)
    sw = np.sqrt(w)[:, None]
    fit_rows = (sw[:, :, None] * CZ[:, :, 1:]).reshape(-1, m - 1)
    fit_target = (sw * (zeta_vals - CZ[:, :, 0])).reshape(-1)

    pen = np.zeros((d * N, m - 1))
    pen[:, d:] = np.sqrt(lam * T / N) * np.eye(d * N)
    Q0 = np.zeros((d, d)) if Q0 is None else np.asarray(Q0, float).reshape(d, d)
    prior = np.zeros((d, m - 1))
    prior[:, :d] = _psd_sqrt(Q0)

    design = np.vstack([fit_rows, pen, prior])
    target = np.concatenate([fit_target, np.zeros(d * N + d)])
    return DiscretizedLQ(N, breaks, nodes, design, target, Z[:, :, 1:], Z[:, :, 0], d)


@dataclass(frozen=True)
class OracleResult:
    cost: float
    x0: np.ndarray
    u: np.ndarray
    breaks: np.ndarray
    fine_times: np.ndarray
    X: np.ndarray

    def u_at(self, t) -> np.ndarray:
        """Piecewise-constant control evaluated at ``t``."""
        t = np.atleast_1d(np.asarray(t, float))
        k = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, self.u.shape[0] - 1)
        return self.u[k]


def _solve(design, target, check_rank=True):
    U, sv, Vt = linalg.svd(design, full_matrices=False)
    if check_rank and sv[-1] <= RANK_RTOL * sv[0]:
        raise NonUniqueMinimumError(
            f"reduced quadratic form is singular (singular value ratio {sv[-1] / sv[0]:.3g}); "
            "the minimizing initial state is not unique"
        )
    z = Vt.T @ ((U.T @ target) / sv)
    res = design @ z - target
    return z, float(res @ res)


def brute_force_min(model, theta, lam, Q0, zeta, N: int = 100, substeps: int = 8, T: Optional[float] = None) -> OracleResult:
    """Global minimum over ``(x0, u)`` of the discretized tracking cost.

    Raises :class:`NonUniqueMinimumError` when the quadratic form is singular,
    which happens for ``Q0 = 0`` and an unobservable system.
    """
    prob = discretize_lq(model, theta, lam, Q0, zeta, N, substeps, T)
    z, cost = _solve(prob.design, prob.target)
    d = model.d
    return OracleResult(cost, z[:d], z[d:].reshape(N, d), prob.breaks, prob.fine_times, prob.states(z))


def brute_force_fixed_x0(model, theta, lam, x0, zeta, N: int = 100, substeps: int = 8, T: Optional[float] = None) -> OracleResult:
    """Minimum over ``u`` only, with the initial state held at ``x0``."""
    prob = discretize_lq(model, theta, lam, None, zeta, N, substeps, T)
    d = model.d
    x0 = np.asarray(x0, float).reshape(d)
    design = prob.design[:-d, d:]
    target = prob.target[:-d] - prob.design[:-d, :d] @ x0
    zu, cost = _solve(design, target, check_rank=False)
    z = np.concatenate([x0, zu])
    return OracleResult(cost, x0, zu.reshape(N, d), prob.breaks, prob.fine_times, prob.states(z))


def lq_cost(model, theta, lam, Q0, zeta, x0, u=None, grid: Optional[TimeGrid] = None) -> float:
    """Tracking cost of a given ``(x0, u)`` by Simpson quadrature on the nodes of ``grid``.

    ``u`` follows the control conventions of the integration module.
    """
    grid = TimeGrid.uniform(model.T, 2001) if grid is None else grid
    X = duhamel_solution(model, theta, x0, u, grid).values
    un = np.broadcast_to(control_on_half_nodes(u, grid, model.d)[0::2], X.shape)
    z = np.asarray(zeta(grid.nodes), float).reshape(len(grid), -1)
    res = z - X @ model.C.T
    integrand = np.sum(res * res, axis=1) + lam * np.sum(un * un, axis=1)
    x0 = np.asarray(x0, float).reshape(model.d)
    Q0 = np.zeros((model.d, model.d)) if Q0 is None else np.asarray(Q0, float)
    return float(x0 @ Q0 @ x0 + simpson(integrand, x=grid.nodes))
