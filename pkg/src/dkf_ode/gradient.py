"""Gradient of the profiled criterion with respect to the parameters.

The sensitivities ``E_j = dE/dtheta_j`` and ``h_j = dh/dtheta_j`` solve the
variational equations of the Riccati/adjoint system and are integrated in
the same forward sweep. With ``x = -E(T)^{-1} h(T)``,

    dS/dtheta_j = int (-2 dr_j' h - 2 r' h_j - 2 h' h_j / lam) dt
                  + 2 h_j(T)' x + x' E_j(T) x

A stacked representation of the same system is provided as well:
``Q = (h, vec(E))`` with ``vec`` stacking columns, so ``Q`` has
``D = d + d^2`` entries and ``dQ/dt = F(Q, t, theta)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .dkf import SampledSignal, _check_lambda, _check_Q0, _criterion_from_parts, _signal_terms, criterion_S
from .errors import DivergenceError
from .integrate import TimeGrid, default_grid

__all__ = [
    "GradientValue",
    "SensitivityPath",
    "adjoint_vector_field",
    "field_jacobian_Q",
    "field_jacobian_theta",
    "grad_S",
    "grad_S_fd",
    "integrate_sensitivities",
    "stack_state",
    "unstack_state",
]


def stack_state(E, h) -> np.ndarray:
    """``(h, vec(E))`` with columns of ``E`` stacked."""
    return np.concatenate([np.asarray(h, float).reshape(-1), np.asarray(E, float).reshape(-1, order="F")])


def unstack_state(Q, d):
    Q = np.asarray(Q, dtype=float)
    return Q[d:].reshape(d, d, order="F"), Q[:d]


def _system_at(model, theta, t):
    A = np.asarray(model.A(float(t), theta), dtype=float).reshape(model.d, model.d)
    r = np.asarray(model.r(float(t), theta), dtype=float).reshape(model.d)
    return A, r


def adjoint_vector_field(Q, t, theta, model, lam, zeta) -> np.ndarray:
    """Right-hand side ``F(Q, t, theta)`` of the stacked Riccati/adjoint system."""
    d = model.d
    E, h = unstack_state(Q, d)
    A, r = _system_at(model, theta, t)
    z = np.asarray(zeta(np.atleast_1d(float(t))), dtype=float).reshape(-1)
    C = model.C
    dh = -(A.T + E / lam) @ h - (C.T @ z + E @ r)
    dE = C.T @ C - A.T @ E - E @ A - E @ E / lam
    return stack_state(dE, dh)


def field_jacobian_Q(Q, t, theta, model, lam) -> np.ndarray:
    """``dF/dQ``, shape ``(D, D)``."""
    d = model.d
    E, h = unstack_state(Q, d)
    A, r = _system_at(model, theta, t)
    I = np.eye(d)
    J = np.zeros((d + d * d, d + d * d))
    J[:d, :d] = -(A.T + E / lam)
    # E v = (v' kron I) vec(E)
    J[:d, d:] = -np.kron((h / lam + r)[None, :], I)
    J[d:, d:] = -np.kron(I, A.T) - np.kron(A.T, I) - (np.kron(I, E) + np.kron(E.T, I)) / lam
    return J


def field_jacobian_theta(Q, t, theta, model, lam) -> np.ndarray:
    """``dF/dtheta``, shape ``(D, p)``."""
    d = model.d
    E, h = unstack_state(Q, d)
    dA = np.asarray(model.dA_dtheta(float(t), theta), dtype=float).reshape(model.p, d, d)
    dr = np.asarray(model.dr_dtheta(float(t), theta), dtype=float).reshape(d, model.p)
    J = np.empty((d + d * d, model.p))
    for j in range(model.p):
        J[:, j] = stack_state(-(dA[j].T @ E + E @ dA[j]), -dA[j].T @ h - E @ dr[:, j])
    return J


@dataclass(frozen=True)
class SensitivityPath:
    """Final values of the Riccati system and its parameter sensitivities.

    ``paths`` holds ``(E, h, E_theta, h_theta)`` at every node when requested.
    """

    grid: TimeGrid
    E_T: np.ndarray
    h_T: np.ndarray
    integrals_T: np.ndarray
    E_theta_T: np.ndarray
    h_theta_T: np.ndarray
    grad_integral_T: np.ndarray
    lam: float
    paths: Optional[tuple] = None


def integrate_sensitivities(model, theta, lam, Q0, zeta, grid: Optional[TimeGrid] = None, store: bool = False) -> SensitivityPath:
    """One forward sweep of the Riccati system, its sensitivities and the integrals."""
    theta = model.check_theta(theta)
    lam = _check_lambda(lam)
    Q0 = _check_Q0(Q0, model.d)
    grid = default_grid(model.T) if grid is None else grid
    half = grid.half_nodes()
    A, r = model.sample(theta, half)
    dA, dr = model.sample_jacobians(theta, half)
    g, zz = _signal_terms(zeta, grid, model.C)
    c = np.ascontiguousarray
    E, h, acc, Es, hs, gacc, paths, bad = kernels.sensitivity_sweep(
        c(A), c(dA), c(r), c(dr), c(model.C.T @ model.C), g, zz, Q0, lam, c(grid.steps), bool(store)
    )
    if bad >= 0:
        raise DivergenceError(
            f"sensitivity sweep blew up at node {bad} (t = {grid.nodes[bad]:.6g})",
            node=int(bad), time=float(grid.nodes[bad]),
        )
    return SensitivityPath(grid, E, h, acc, Es, hs, gacc, lam, paths)


@dataclass(frozen=True)
class GradientValue:
    """``S`` and ``dS/dtheta``; ``parts`` splits the gradient into the integral,
    the ``h(T)`` term and the ``E(T)`` term."""

    S: float
    grad: np.ndarray
    parts: tuple
    x_hat_T: np.ndarray
    method: str = "analytic"


def grad_S(model, theta, lam, Q0, zeta, grid: Optional[TimeGrid] = None, method: str = "analytic") -> GradientValue:
    """Criterion value and gradient.

    ``method="fd"`` switches to central finite differences of the criterion,
    a fallback for models without analytic parameter derivatives.
    """
    if method == "fd":
        return grad_S_fd(model, theta, lam, Q0, zeta, grid)
    if method != "analytic":
        raise ValueError(f"unknown gradient method {method!r}")
    sp = integrate_sensitivities(model, theta, lam, Q0, zeta, grid)
    S, _, x, _ = _criterion_from_parts(sp.integrals_T, sp.E_T, sp.h_T, sp.lam)
    g_int = sp.grad_integral_T
    g_h = 2.0 * (sp.h_theta_T @ x)
    g_E = np.einsum("i,pij,j->p", x, sp.E_theta_T, x)
    return GradientValue(S, g_int + g_h + g_E, (g_int, g_h, g_E), x)


def grad_S_fd(model, theta, lam, Q0, zeta, grid: Optional[TimeGrid] = None, rel_step: float = 1e-4) -> GradientValue:
    """Central differences, one-sided at the boundary of the parameter domain."""
    theta = model.check_theta(theta)
    grid = default_grid(model.T) if grid is None else grid
    if not (isinstance(zeta, SampledSignal) and zeta.grid is grid):
        zeta = SampledSignal(zeta, grid)
    base = criterion_S(model, theta, lam, Q0, zeta, grid)
    lo, hi = model.theta_domain[:, 0], model.theta_domain[:, 1]
    grad = np.empty(model.p)
    for j in range(model.p):
        step = rel_step * max(abs(theta[j]), 1e-3)
        up, dn = theta.copy(), theta.copy()
        up[j] = min(theta[j] + step, hi[j])
        dn[j] = max(theta[j] - step, lo[j])
        f_up = criterion_S(model, up, lam, Q0, zeta, grid).S if up[j] != theta[j] else base.S
        f_dn = criterion_S(model, dn, lam, Q0, zeta, grid).S if dn[j] != theta[j] else base.S
        grad[j] = (f_up - f_dn) / (up[j] - dn[j])
    return GradientValue(base.S, grad, (grad, np.zeros(model.p), np.zeros(model.p)), base.x_hat_T, "fd")
