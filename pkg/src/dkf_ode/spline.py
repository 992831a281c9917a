"""Least-squares regression splines used as the nonparametric output proxy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import DomainError, IllPosedFitError

__all__ = [
    "SplineBasis",
    "SmoothEstimate",
    "bspline_basis",
    "design_matrix",
    "fit_regression_spline",
    "gcv_select_knots",
]


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis of ``degree`` on ``[t0, t1]`` with interior ``knots``."""

    degree: int
    knots: np.ndarray
    t0: float
    t1: float

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).reshape(-1)
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if not self.t1 > self.t0:
            raise ValueError("empty boundary interval")
        if knots.size and (np.any(np.diff(knots) <= 0) or knots[0] <= self.t0 or knots[-1] >= self.t1):
            raise ValueError("interior knots must be strictly increasing inside (t0, t1)")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def uniform(cls, T: float, n_knots: int, degree: int = 3, t0: float = 0.0) -> "SplineBasis":
        """``n_knots`` equispaced knots on ``[t0, T]``, both boundaries included.

        ``n_knots = 4`` on ``[0, 100]`` gives interior knots at 100/3 and 200/3.
        """
        if n_knots < 2:
            raise ValueError("need at least the two boundary knots")
        return cls(degree, np.linspace(t0, T, n_knots)[1:-1], float(t0), float(T))

    @property
    def K(self) -> int:
        return self.knots.size + self.degree + 1

    @property
    def n_knots(self) -> int:
        """Knot count including both boundaries."""
        return self.knots.size + 2

    @property
    def full_knots(self) -> np.ndarray:
        k = self.degree
        return np.concatenate([[self.t0] * (k + 1), self.knots, [self.t1] * (k + 1)])


def design_matrix(basis: SplineBasis, t) -> np.ndarray:
    """Basis values at ``t``, shape ``(len(t), K)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    span = basis.t1 - basis.t0
    tol = 1e-9 * max(span, 1.0)
    if np.any(t < basis.t0 - tol) or np.any(t > basis.t1 + tol):
        raise DomainError(f"spline evaluated outside [{basis.t0}, {basis.t1}]")
    t = np.clip(t, basis.t0, basis.t1)
    return BSpline.design_matrix(t, basis.full_knots, basis.degree).toarray()


def bspline_basis(basis: SplineBasis, t: float) -> np.ndarray:
    """The ``K`` basis function values at a single time ``t``."""
    return design_matrix(basis, [t])[0]


@dataclass(frozen=True)
class SmoothEstimate:
    """Per-channel spline fit; calling it evaluates the channels at given times."""

    basis: SplineBasis
    coefficients: np.ndarray
    rss: np.ndarray
    gcv: np.ndarray
    n: int

    def __call__(self, t) -> np.ndarray:
        return design_matrix(self.basis, t) @ self.coefficients

    @property
    def d_obs(self) -> int:
        return self.coefficients.shape[1]


def fit_regression_spline(obs, basis: SplineBasis) -> SmoothEstimate:
    """Ordinary least squares fit of every output channel on ``basis``."""
    B = design_matrix(basis, obs.times)
    n, K = B.shape
    if n < K:
        raise IllPosedFitError(f"{n} observations cannot determine {K} spline coefficients; use fewer knots")
    sv = np.linalg.svd(B, compute_uv=False)
    if sv[-1] <= max(n, K) * np.finfo(float).eps * sv[0]:
        raise IllPosedFitError("spline design matrix is rank deficient; use fewer knots")
    coef, *_ = np.linalg.lstsq(B, obs.values, rcond=None)
    resid = obs.values - B @ coef
    rss = np.sum(resid**2, axis=0)
    # hat matrix trace of a full-rank least-squares projection is K
    denom = (1.0 - K / n) ** 2
    gcv = (rss / n) / denom if denom > 0 else np.full_like(rss, np.inf)
    return SmoothEstimate(basis, coef, rss, gcv, n)


def gcv_select_knots(obs, candidate_counts, degree: int = 3, T: float | None = None):
    """Pick the uniform knot count minimizing GCV summed over channels.

    Counts include both boundary knots. Ties go to the smaller count.
    Candidates with more coefficients than observations are skipped.
    Returns ``(basis, scores)`` with ``scores`` mapping count to GCV.
    """
    counts = sorted(set(int(c) for c in candidate_counts))
    if not counts:
        raise ValueError("empty candidate list")
    T = obs.T if T is None else T
    t0 = float(min(0.0, obs.times[0]))
    best, best_score, scores = None, np.inf, {}
    for c in counts:
        basis = SplineBasis.uniform(T, c, degree, t0)
        if basis.K > obs.n:
            continue
        try:
            score = float(np.sum(fit_regression_spline(obs, basis).gcv))
        except IllPosedFitError:
            continue
        scores[c] = score
        if best is None or score < best_score:
            best, best_score = basis, score
    if best is None:
        raise IllPosedFitError("no candidate knot count yields a well-posed fit")
    return best, scores
