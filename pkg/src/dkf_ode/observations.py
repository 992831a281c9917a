"""Sampled outputs ``Y_i = C X(t_i) + eps_i`` and their simulation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .integrate import Trajectory, default_grid, duhamel_solution

__all__ = [
    "ObservationSet",
    "make_rng",
    "observation_times",
    "simulate_observations",
    "true_trajectory",
]


def make_rng(seed) -> np.random.Generator:
    """Counter-based 64-bit generator (Philox) keyed by ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class ObservationSet:
    """``n >= 2`` increasing sample times with their ``d_obs``-dimensional outputs."""

    times: np.ndarray
    values: np.ndarray
    sigma: Optional[float] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.size < 2:
            raise ValueError("need at least two observations")
        if values.shape[0] != times.size:
            raise ValueError("times and values disagree in length")
        if np.any(np.diff(times) < 0) or times[0] < 0:
            raise ValueError("observation times must be nonnegative and increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def d_obs(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"y{j + 1}" for j in range(self.d_obs)])
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, sigma=None) -> "ObservationSet":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:], sigma)


def observation_times(n: int, T: float, scheme: str = "equispaced", rng=None) -> np.ndarray:
    """Sample times on ``[0, T]`` with ``t_1 = 0`` and ``t_n = T``.

    ``scheme`` is ``"equispaced"`` or ``"uniform"`` (sorted i.i.d. uniform
    interior times).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if scheme == "equispaced":
        return np.linspace(0.0, T, n)
    if scheme == "uniform":
        rng = make_rng(rng)
        inner = np.sort(rng.uniform(0.0, T, size=n - 2))
        return np.concatenate([[0.0], inner, [T]])
    raise ValueError(f"unknown sampling scheme {scheme!r}")


def true_trajectory(model, theta_star, x0_star, grid, perturb: bool = True) -> Trajectory:
    """Truth on ``grid``, including the model perturbation when ``perturb``."""
    v = model.perturbation if perturb else None
    return duhamel_solution(model, theta_star, x0_star, None, grid, forcing=v)


def simulate_observations(
    model,
    theta_star,
    x0_star,
    times,
    sigma: float,
    seed=None,
    perturb: bool = True,
    grid=None,
) -> ObservationSet:
    """Simulate ``Y_i = C X*(t_i) + sigma * N(0, I)``.

    ``sigma`` is the noise standard deviation. The truth is integrated on a
    dense grid that contains every sample time.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    times = np.asarray(times, dtype=float)
    T = max(float(times[-1]), model.T if grid is None else grid.T)
    if grid is None:
        grid = default_grid(T, times.size, times)
    X = true_trajectory(model, theta_star, x0_star, grid, perturb)
    clean = X.values[grid.locate(times)] @ model.C.T
    noise = make_rng(seed).standard_normal(clean.shape) if sigma > 0 else 0.0
    return ObservationSet(times, clean + sigma * noise, float(sigma))
