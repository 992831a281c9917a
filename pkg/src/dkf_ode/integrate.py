"""Fixed-step RK4 integration of linear systems on explicit time grids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from . import kernels
from .errors import DivergenceError, DomainError

__all__ = [
    "TimeGrid",
    "Trajectory",
    "default_grid",
    "solve_ivp",
    "resolvant",
    "duhamel_solution",
    "control_on_half_nodes",
]

DEFAULT_MIN_NODES = 2000
NODES_PER_OBSERVATION = 20


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nodes on ``[0, T]`` with ``nodes[0] == 0``."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1)
        if nodes.size < 2:
            raise ValueError("a grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("grid must start at t = 0")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, T: float, n_nodes: int) -> "TimeGrid":
        return cls(np.linspace(0.0, float(T), int(n_nodes)))

    @classmethod
    def including(cls, T: float, n_nodes: int, times) -> "TimeGrid":
        """Uniform grid refined so that every entry of ``times`` is a node."""
        base = np.linspace(0.0, float(T), int(n_nodes))
        allt = np.union1d(base, np.asarray(times, dtype=float))
        # merge near-duplicates created by the union
        keep = np.concatenate([[True], np.diff(allt) > 1e-12 * max(T, 1.0)])
        allt = allt[keep]
        allt[-1] = max(allt[-1], float(T))
        return cls(allt)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    def __len__(self):
        return self.nodes.size

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def half_nodes(self) -> np.ndarray:
        """Nodes interleaved with step midpoints, length ``2 N + 1``."""
        out = np.empty(2 * self.n_steps + 1)
        out[0::2] = self.nodes
        out[1::2] = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        return out

    def locate(self, times) -> np.ndarray:
        """Node indices of ``times``; each must coincide with a node."""
        times = np.asarray(times, dtype=float)
        idx = np.clip(np.searchsorted(self.nodes, times), 0, self.nodes.size - 1)
        lower = np.clip(idx - 1, 0, None)
        pick = np.where(np.abs(self.nodes[lower] - times) < np.abs(self.nodes[idx] - times), lower, idx)
        if np.any(np.abs(self.nodes[pick] - times) > 1e-9 * max(self.T, 1.0)):
            raise DomainError("requested times are not grid nodes")
        return pick


def default_grid(T: float, n_obs: int = 0, times=None) -> TimeGrid:
    """Dense grid with ``max(20 n_obs, 2000)`` nodes, containing ``times`` if given."""
    n_nodes = max(NODES_PER_OBSERVATION * int(n_obs), DEFAULT_MIN_NODES)
    if times is None:
        return TimeGrid.uniform(T, n_nodes)
    return TimeGrid.including(T, n_nodes, times)


@dataclass(frozen=True)
class Trajectory:
    """Values of a solution at every node of ``grid``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != len(self.grid):
            raise ValueError("trajectory length does not match its grid")

    def at(self, times) -> np.ndarray:
        """Linear interpolation of the values at arbitrary times."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        flat = self.values.reshape(len(self.grid), -1)
        out = np.column_stack([np.interp(times, self.grid.nodes, flat[:, j]) for j in range(flat.shape[1])])
        return out.reshape((times.size,) + self.values.shape[1:])

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


def _raise_divergence(bad, grid, what="state"):
    if bad >= 0:
        raise DivergenceError(
            f"non-finite {what} at node {bad} (t = {grid.nodes[bad]:.6g})", node=int(bad), time=float(grid.nodes[bad])
        )


def solve_ivp(rhs: Callable, x0, grid: TimeGrid) -> Trajectory:
    """Classical RK4 for ``x' = rhs(t, x)`` on the nodes of ``grid``.

    ``rhs`` is a general Python callable; the linear-system helpers below go
    through the compiled sweeps instead.
    """
    x = np.array(x0, dtype=float)
    nodes = grid.nodes
    out = np.empty((nodes.size,) + x.shape)
    out[0] = x
    for k in range(nodes.size - 1):
        t, dt = nodes[k], nodes[k + 1] - nodes[k]
        k1 = np.asarray(rhs(t, x))
        k2 = np.asarray(rhs(t + 0.5 * dt, x + 0.5 * dt * k1))
        k3 = np.asarray(rhs(t + 0.5 * dt, x + 0.5 * dt * k2))
        k4 = np.asarray(rhs(t + dt, x + dt * k3))
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            _raise_divergence(k + 1, grid)
        out[k + 1] = x
    return Trajectory(grid, out)


def control_on_half_nodes(u, grid: TimeGrid, d: int) -> np.ndarray:
    """Sample a control on the half nodes of ``grid``.

    ``u`` may be ``None`` (zero), a callable of time returning a ``d``-vector,
    an array on the half nodes ``(2N+1, d)``, or an array on the nodes
    ``(N+1, d)``, in which case midpoints are linearly interpolated.
    """
    half = grid.half_nodes()
    if u is None:
        return np.zeros((1, d))
    if callable(u):
        return np.array([np.asarray(u(t), dtype=float).reshape(d) for t in half])
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and u.size == d:
        return u.reshape(1, d)
    if u.shape == (half.size, d):
        return u
    if u.shape == (len(grid), d):
        out = np.empty((half.size, d))
        out[0::2] = u
        out[1::2] = 0.5 * (u[:-1] + u[1:])
        return out
    raise ValueError(f"control of shape {u.shape} does not match the grid")


def _contig(a):
    return np.ascontiguousarray(a, dtype=float)


def resolvant(model, theta, grid: TimeGrid) -> Trajectory:
    """State-transition matrices ``Phi(t, 0)`` at every node."""
    theta = model.check_theta(theta)
    A, _ = model.sample(theta, grid.half_nodes())
    d = model.d
    Z, bad = kernels.linear_sweep(_contig(A), np.zeros((1, d, d)), np.eye(d), _contig(grid.steps))
    _raise_divergence(bad, grid, "resolvant")
    return Trajectory(grid, Z)


def duhamel_solution(model, theta, x0, u=None, grid: Optional[TimeGrid] = None, forcing=None) -> Trajectory:
    """Solve ``x' = A x + r + u`` from ``x0`` (plus an optional extra ``forcing``).

    ``forcing`` follows the same conventions as ``u``; it is used to inject
    the model perturbation when simulating misspecified data.
    """
    theta = model.check_theta(theta)
    if grid is None:
        grid = default_grid(model.T)
    half = grid.half_nodes()
    A, r = model.sample(theta, half)
    d = model.d
    B = r + control_on_half_nodes(u, grid, d)
    if forcing is not None:
        B = B + control_on_half_nodes(forcing, grid, d)
    Z, bad = kernels.linear_sweep(
        _contig(A), _contig(B.reshape(-1, d, 1)), np.asarray(x0, dtype=float).reshape(d, 1), _contig(grid.steps)
    )
    _raise_divergence(bad, grid)
    return Trajectory(grid, Z[:, :, 0])
