"""Randomized comparison of the closed-form criterion with the brute-force oracle."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .dkf import criterion_S, integrate_adjoint, observability_gramian, smooth_trajectory
from .integrate import TimeGrid
from .models import autonomous_model, get_model
from .observations import make_rng
from .oracle import brute_force_min

__all__ = ["OracleCheck", "random_instances", "run_oracle_suite", "scalar_model"]

S_RTOL = 1e-4
X0_TOL = 1e-3
U_RMS_TOL = 5e-3


def scalar_model(T: float = 1.0):
    """``x' = -a x + u``, fully observed, with ``a`` in ``[-5, 5]``."""
    return autonomous_model(
        "scalar",
        A=lambda th: np.array([[-th[0]]]),
        r=lambda th: np.zeros(1),
        C=np.array([[1.0]]),
        dA=lambda th: -np.ones((1, 1, 1)),
        dr=lambda th: np.zeros((1, 1)),
        theta_domain=[[-5.0, 5.0]],
        T=T,
        theta_star=np.array([1.0]),
        x0_star=np.array([1.0]),
    )


class _Signal:
    """Smooth random signal: a polynomial plus a sinusoid per channel."""

    def __init__(self, rng, d_obs, T):
        self.c = rng.normal(size=(4, d_obs))
        self.w = rng.uniform(1.0, 4.0, size=d_obs) * 2 * np.pi / T
        self.a = rng.normal(size=d_obs)
        self.T = T

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, float))
        s = t[:, None] / self.T
        poly = sum(self.c[k] * s**k for k in range(self.c.shape[0]))
        return poly + self.a * np.sin(self.w * t[:, None])


@dataclass(frozen=True)
class OracleCheck:
    label: str
    S_closed: float
    S_oracle: float
    S_error: float
    x0_error: float
    u_rms_error: float

    @property
    def passed(self) -> bool:
        return self.S_error <= S_RTOL and self.x0_error <= X0_TOL and self.u_rms_error <= U_RMS_TOL


def random_instances(n: int = 20, seed: int = 0):
    """Yield ``(label, model, theta, lam, Q0, zeta)`` small test problems.

    Alternates between the scalar model and the toy model on short horizons,
    with penalty weights in ``{0.1, 1, 10}`` and ``Q0`` either zero or the
    identity.
    """
    rng = make_rng(seed)
    toy = get_model("toy1")
    lams = (0.1, 1.0, 10.0)
    for i in range(n):
        lam = lams[i % 3]
        use_Q0 = (i // 3) % 2 == 1
        if i % 2 == 0:
            T = float(rng.uniform(1.0, 3.0))
            model = scalar_model(T)
            theta = rng.uniform(-2.0, 2.0, size=1)
        else:
            T = float(rng.uniform(2.0, 8.0))
            model = dataclasses.replace(toy, T=T)
            theta = rng.uniform(0.05, 0.8, size=2)
        Q0 = np.eye(model.d) if use_Q0 else np.zeros((model.d, model.d))
        zeta = _Signal(rng, model.d_obs, T)
        label = f"{model.name} T={T:.2f} theta={np.round(theta, 3).tolist()} lam={lam:g} Q0={'I' if use_Q0 else '0'}"
        yield label, model, theta, lam, Q0, zeta


def check_instance(label, model, theta, lam, Q0, zeta, N: int = 200, grid_nodes: int = 4001, extrapolate: bool = True) -> OracleCheck:
    """Compare one instance.

    The oracle error decays like ``N^-2``; with ``extrapolate`` the oracle
    cost and initial state are Richardson-extrapolated from ``N / 2`` and
    ``N`` intervals.
    """
    grid = TimeGrid.uniform(model.T, grid_nodes)
    if not np.any(Q0):
        assert observability_gramian(model, theta, grid=grid).passes, label
    path = integrate_adjoint(model, theta, lam, Q0, zeta, grid)
    S = criterion_S(model, theta, lam, Q0, zeta, path=path).S
    sm = smooth_trajectory(model, theta, lam, path)
    orc = brute_force_min(model, theta, lam, Q0, zeta, N)
    cost, x0 = orc.cost, orc.x0
    if extrapolate:
        coarse = brute_force_min(model, theta, lam, Q0, zeta, N // 2)
        cost = (4.0 * orc.cost - coarse.cost) / 3.0
        x0 = (4.0 * orc.x0 - coarse.x0) / 3.0
    # compare controls at interval midpoints, where the piecewise-constant
    # projection of a smooth control is second-order accurate
    mids = 0.5 * (orc.breaks[:-1] + orc.breaks[1:])
    u_closed = np.column_stack([np.interp(mids, grid.nodes, sm.u_bar[:, j]) for j in range(model.d)])
    scale = max(1.0, float(np.sqrt(np.mean(sm.u_bar**2))))
    u_rms = float(np.sqrt(np.mean((u_closed - orc.u) ** 2))) / scale
    return OracleCheck(
        label,
        S,
        cost,
        abs(S - cost) / (1.0 + abs(S)),
        float(np.max(np.abs(sm.x0_hat - x0))),
        u_rms,
    )


def run_oracle_suite(n: int = 20, seed: int = 0, N: int = 200, extrapolate: bool = True) -> list:
    """Run :func:`check_instance` on ``n`` random instances."""
    return [check_instance(*inst, N=N, extrapolate=extrapolate) for inst in random_instances(n, seed)]
