"""Parametric linear ODE systems ``x' = A(t, theta) x + r(t, theta)`` and a name registry.

Three systems are built in:

``toy1``
    Three-compartment transfer model; the first compartment is hidden.
``toy2``
    ``toy1`` plus the additive perturbation ``v(t) = 0.4 sin(t / 5)`` on every
    component. The perturbation only enters data simulation; estimation uses
    the unperturbed dynamics.
``methanation``
    Four-species isotopic tracer model, nonlinear in its four parameters,
    with the surface oxygen pool hidden.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ParameterDomainError

__all__ = [
    "ModelSpec",
    "autonomous_model",
    "evaluate_system",
    "get_model",
    "register_model",
    "registered_models",
    "METHANATION_CONSTANTS",
]


@dataclass(frozen=True)
class ModelSpec:
    """A linear time-varying system indexed by a parameter vector.

    Parameters
    ----------
    name : str
        Registry key.
    d, d_obs, p : int
        State, output and parameter dimensions.
    theta_domain : ndarray, shape (p, 2)
        Inclusive lower/upper bounds per parameter.
    A, r : callable
        ``A(t, theta) -> (d, d)`` and ``r(t, theta) -> (d,)``.
    C : ndarray, shape (d_obs, d)
        Constant observation matrix.
    dA_dtheta, dr_dtheta : callable
        ``dA_dtheta(t, theta) -> (p, d, d)`` and ``dr_dtheta(t, theta) -> (d, p)``.
    is_autonomous : bool
        When true, ``A`` and ``r`` ignore ``t`` and are sampled once per call.
    T : float
        Default horizon.
    theta_star, x0_star : ndarray, optional
        Reference truth used by the experiment harness.
    perturbation : callable, optional
        ``v(t) -> (d,)`` added to the true dynamics when simulating data.
    """

    name: str
    d: int
    d_obs: int
    p: int
    theta_domain: np.ndarray
    A: Callable
    r: Callable
    C: np.ndarray
    dA_dtheta: Callable
    dr_dtheta: Callable
    is_autonomous: bool = True
    T: float = 1.0
    theta_star: Optional[np.ndarray] = None
    x0_star: Optional[np.ndarray] = None
    perturbation: Optional[Callable] = None
    description: str = ""
    param_names: tuple = field(default=())

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        dom = np.asarray(self.theta_domain, dtype=float).reshape(self.p, 2)
        if C.shape != (self.d_obs, self.d):
            raise ValueError(f"C has shape {C.shape}, expected {(self.d_obs, self.d)}")
        if self.d_obs > self.d or np.linalg.matrix_rank(C) != self.d_obs:
            raise ValueError("C must have full row rank d_obs <= d")
        if np.any(dom[:, 0] > dom[:, 1]):
            raise ValueError("theta_domain lower bounds exceed upper bounds")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "theta_domain", dom)
        for key in ("theta_star", "x0_star"):
            val = getattr(self, key)
            if val is not None:
                object.__setattr__(self, key, np.asarray(val, dtype=float))

    @property
    def observed_components(self) -> np.ndarray:
        """Indices of state components that enter the output."""
        return np.flatnonzero(np.any(self.C != 0, axis=0))

    @property
    def hidden_components(self) -> np.ndarray:
        return np.flatnonzero(~np.any(self.C != 0, axis=0))

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.p,):
            raise ParameterDomainError(f"{self.name}: expected {self.p} parameters, got {theta.size}")
        lo, hi = self.theta_domain[:, 0], self.theta_domain[:, 1]
        bad = np.flatnonzero(~np.isfinite(theta) | (theta < lo) | (theta > hi))
        if bad.size:
            i = bad[0]
            raise ParameterDomainError(
                f"{self.name}: parameter {i} = {theta[i]!r} outside [{lo[i]}, {hi[i]}]"
            )
        return theta

    def sample(self, theta, times):
        """Evaluate ``A`` and ``r`` on an array of times.

        Autonomous models return arrays with a leading axis of length 1,
        which the integration kernels broadcast over every node.
        """
        theta = np.asarray(theta, dtype=float)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if self.is_autonomous:
            t0 = times[0] if times.size else 0.0
            A = np.asarray(self.A(t0, theta), dtype=float).reshape(1, self.d, self.d)
            r = np.asarray(self.r(t0, theta), dtype=float).reshape(1, self.d)
        else:
            A = np.array([self.A(t, theta) for t in times], dtype=float).reshape(-1, self.d, self.d)
            r = np.array([self.r(t, theta) for t in times], dtype=float).reshape(-1, self.d)
        return A, r

    def sample_jacobians(self, theta, times):
        """Evaluate ``dA/dtheta`` (M, p, d, d) and ``dr/dtheta`` (M, d, p)."""
        theta = np.asarray(theta, dtype=float)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        pts = times[:1] if self.is_autonomous else times
        if pts.size == 0:
            pts = np.zeros(1)
        dA = np.array([self.dA_dtheta(t, theta) for t in pts], dtype=float)
        dr = np.array([self.dr_dtheta(t, theta) for t in pts], dtype=float)
        return dA.reshape(-1, self.p, self.d, self.d), dr.reshape(-1, self.d, self.p)


def evaluate_system(model: ModelSpec, theta, t: float):
    """Return ``(A(t, theta), r(t, theta))`` after checking the parameter domain."""
    theta = model.check_theta(theta)
    A = np.asarray(model.A(float(t), theta), dtype=float).reshape(model.d, model.d)
    r = np.asarray(model.r(float(t), theta), dtype=float).reshape(model.d)
    return A, r


def autonomous_model(name, A, r, C, dA, dr, theta_domain, **kwargs) -> ModelSpec:
    """Build a :class:`ModelSpec` from time-independent callables of ``theta`` only."""
    return ModelSpec(
        name=name,
        d=np.atleast_2d(C).shape[1],
        d_obs=np.atleast_2d(C).shape[0],
        p=np.asarray(theta_domain).reshape(-1, 2).shape[0],
        theta_domain=theta_domain,
        A=lambda t, th: A(th),
        r=lambda t, th: r(th),
        C=C,
        dA_dtheta=lambda t, th: dA(th),
        dr_dtheta=lambda t, th: dr(th),
        is_autonomous=True,
        **kwargs,
    )


# --------------------------------------------------------------------------- toy

_TOY_THETA = np.array([0.0593, 0.0296])
_TOY_C = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def _toy_A(th):
    k1, k2 = th
    return np.array([[-(k1 + k2), 0.0, 0.0], [k1, 0.0, 0.0], [k2, 0.0, 0.0]])


def _toy_dA(th):
    out = np.zeros((2, 3, 3))
    out[0, 0, 0], out[0, 1, 0] = -1.0, 1.0
    out[1, 0, 0], out[1, 2, 0] = -1.0, 1.0
    return out


def toy_perturbation(t):
    return np.full(3, 0.4 * np.sin(t / 5.0))


def _make_toy(name, perturbation=None, description=""):
    return autonomous_model(
        name,
        A=_toy_A,
        r=lambda th: np.zeros(3),
        C=_TOY_C,
        dA=_toy_dA,
        dr=lambda th: np.zeros((3, 2)),
        theta_domain=[[0.0, 1.0], [0.0, 1.0]],
        T=100.0,
        theta_star=_TOY_THETA,
        # (0, 0, 100) is an equilibrium of this system; the source compartment
        # must start loaded for the rates to be identifiable.
        x0_star=np.array([100.0, 0.0, 0.0]),
        perturbation=perturbation,
        description=description,
        param_names=("k1", "k2"),
    )


# ------------------------------------------------------------------- methanation

METHANATION_CONSTANTS = {
    "F_in": 0.59,  # inlet CO flow rate
    "F_out": 0.45,  # outlet CO flow rate
    "z_in": 0.132,  # 18O fraction of the inlet CO
    "V": 0.124,
    "V_prime": 0.01,
    "W": 0.744,  # catalyst weight
    "beta": 206.1,  # dead-space volume
    # Gas-phase concentrations are not tabulated with the other constants; these
    # values put every observed time scale near 10 time units on [0, 40].
    "C_CO": 0.03,
    "C_H2O": 0.03,
    "C_CO2": 0.03,
}


def _meth_parts(th):
    k = METHANATION_CONSTANTS
    c_col, c_os, v5, v6 = th
    a = k["beta"] * k["C_CO"] / k["W"] + c_col
    b2 = k["beta"] * k["C_H2O"] / k["W"]
    b3 = k["beta"] * k["C_CO2"] / k["W"]
    return k, a, b2, b3, c_os, v5, v6


def _meth_A(th):
    k, a, b2, b3, c_os, v5, v6 = _meth_parts(th)
    V, Vp = k["V"], k["V_prime"]
    return np.array(
        [
            [-(V + Vp + k["F_out"] / k["W"]) / a, 0.0, 0.0, 0.0],
            [(V + Vp) / b2, -(V + Vp + v5) / b2, 0.0, v5 / b2],
            [Vp / b3, 0.0, -(Vp + v6) / b3, v6 / b3],
            [0.0, v5 / c_os, v6 / c_os, -(v5 + v6) / c_os],
        ]
    )


def _meth_r(th):
    k, a, *_ = _meth_parts(th)
    return np.array([k["F_in"] * k["z_in"] / a, 0.0, 0.0, 0.0])


def _meth_dA(th):
    k, a, b2, b3, c_os, v5, v6 = _meth_parts(th)
    out = np.zeros((4, 4, 4))
    out[0, 0, 0] = (k["V"] + k["V_prime"] + k["F_out"] / k["W"]) / a**2
    out[1, 3] = -_meth_A(th)[3] / c_os
    out[2, 1, 1], out[2, 1, 3] = -1.0 / b2, 1.0 / b2
    out[2, 3, 1], out[2, 3, 3] = 1.0 / c_os, -1.0 / c_os
    out[3, 2, 2], out[3, 2, 3] = -1.0 / b3, 1.0 / b3
    out[3, 3, 2], out[3, 3, 3] = 1.0 / c_os, -1.0 / c_os
    return out


def _meth_dr(th):
    k, a, *_ = _meth_parts(th)
    out = np.zeros((4, 4))
    out[0, 0] = -k["F_in"] * k["z_in"] / a**2
    return out


def _make_methanation():
    return autonomous_model(
        "methanation",
        A=_meth_A,
        r=_meth_r,
        C=np.eye(4)[:3],
        dA=_meth_dA,
        dr=_meth_dr,
        theta_domain=[[1e-6, 1e3]] * 4,
        T=40.0,
        theta_star=np.array([0.1, 11.1, 0.35, 0.008]),
        x0_star=np.zeros(4),
        description="CO methanation isotopic tracer model",
        param_names=("C_COl", "C_Os", "v5", "v6"),
    )


_REGISTRY: dict = {}


def register_model(model: ModelSpec, overwrite: bool = False) -> ModelSpec:
    if model.name in _REGISTRY and not overwrite:
        raise KeyError(f"model {model.name!r} already registered")
    _REGISTRY[model.name] = model
    return model


def get_model(name: str) -> ModelSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; registered: {sorted(_REGISTRY)}") from None


def registered_models() -> list:
    return sorted(_REGISTRY)


register_model(_make_toy("toy1", description="three-compartment model, x1 hidden"))
register_model(
    _make_toy("toy2", perturbation=toy_perturbation, description="toy1 with sinusoidal model error")
)
register_model(_make_methanation())
