"""Parameter estimation: the profiled-criterion estimator, an NLS baseline and
the choice of the penalty weight by predictive error."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.integrate import trapezoid

from . import kernels
from .dkf import SampledSignal, SmoothedTrajectory, criterion_S, integrate_adjoint, observability_gramian, smooth_trajectory
from .errors import DKFError, DivergenceError, NonConvergenceError, ObservabilityError
from .gradient import grad_S
from .integrate import TimeGrid, default_grid, duhamel_solution
from .observations import make_rng

__all__ = [
    "EstimateResult",
    "EstimatorOptions",
    "LambdaSelection",
    "estimate_dkf",
    "estimate_nls",
    "initial_state_lstsq",
    "prediction_sse",
    "select_lambda",
]

log = logging.getLogger(__name__)

FAILED_EVAL = 1e6  # objective reported for failed probes, relative to the start value
# S is resolved only to a small fraction of the signal energy int |zeta|^2;
# below this floor the optimizer and the convergence test treat it as zero
S_FLOOR_RTOL = 1e-6


@dataclass(frozen=True)
class EstimatorOptions:
    """Optimizer settings shared by both estimators.

    ``start_box`` is a ``(p, 2)`` array of bounds for random starting points
    (defaults to the model domain); ``bounds`` optionally narrows the search
    box itself.
    """

    max_iter: int = 200
    gtol: float = 1e-6
    ftol: float = 1e-12
    n_starts: int = 5
    seed: int = 0
    start_box: Optional[np.ndarray] = None
    bounds: Optional[np.ndarray] = None
    gradient: str = "analytic"
    keep_trace: bool = False


@dataclass
class EstimateResult:
    method: str
    theta_hat: np.ndarray
    x0_hat: np.ndarray
    objective: float
    initial_objective: float
    n_evals: int
    converged: bool
    lambda_used: Optional[float] = None
    smoothed: Optional[SmoothedTrajectory] = None
    message: str = ""
    trace: list = field(default_factory=list)

    @property
    def S_final(self) -> float:
        return self.objective

    @property
    def RSS_final(self) -> float:
        return self.objective


def _search_box(model, opts: EstimatorOptions):
    box = model.theta_domain.copy()
    if opts.bounds is not None:
        b = np.asarray(opts.bounds, float).reshape(model.p, 2)
        box[:, 0] = np.maximum(box[:, 0], b[:, 0])
        box[:, 1] = np.minimum(box[:, 1], b[:, 1])
    if np.any(box[:, 0] > box[:, 1]):
        raise ValueError("search bounds do not intersect the parameter domain")
    return box


def _start_points(model, theta_init, opts: EstimatorOptions, box):
    starts = []
    if theta_init is not None:
        starts.append(np.clip(np.asarray(theta_init, float).reshape(model.p), box[:, 0], box[:, 1]))
    sbox = box if opts.start_box is None else np.asarray(opts.start_box, float).reshape(model.p, 2)
    lo = np.maximum(sbox[:, 0], box[:, 0])
    hi = np.minimum(sbox[:, 1], box[:, 1])
    rng = make_rng(opts.seed)
    while len(starts) < max(opts.n_starts, 1):
        starts.append(rng.uniform(lo, hi))
    return starts


def _scale(box, starts):
    # optimize in theta / scale so coordinates of different magnitudes are comparable
    s = np.maximum(np.abs(np.asarray(starts)).max(axis=0), 1e-12)
    finite = np.isfinite(box[:, 1])
    s = np.where(finite, np.minimum(s, np.abs(box[:, 1]) + np.abs(box[:, 0])), s)
    return np.where(s > 0, s, 1.0)


def estimate_dkf(
    model,
    obs,
    zeta,
    lam: float,
    opts: EstimatorOptions = EstimatorOptions(),
    theta_init=None,
    Q0=None,
    grid: Optional[TimeGrid] = None,
) -> EstimateResult:
    """Minimize the profiled criterion ``theta -> S(zeta; theta, lam)``.

    Runs L-BFGS-B inside the parameter box from ``opts.n_starts`` points
    (``theta_init`` first when given) and returns the best one, together with
    the initial state and optimal trajectory at the estimate.
    """
    box = _search_box(model, opts)
    T = max(model.T, obs.T)
    grid = default_grid(T, obs.n, obs.times) if grid is None else grid
    if not (isinstance(zeta, SampledSignal) and zeta.grid is grid):
        zeta = SampledSignal(zeta, grid)
    starts = _start_points(model, theta_init, opts, box)
    zero_Q0 = Q0 is None or not np.any(np.asarray(Q0))
    if zero_Q0:
        for th in starts[:1]:
            rep = observability_gramian(model, th, grid=grid)
            if not rep.passes:
                raise ObservabilityError(
                    f"{model.name}: the outputs do not determine the initial state at theta = {th} "
                    f"(Gramian eigenvalue ratio {rep.min_eigenvalue / max(rep.max_eigenvalue, 1e-300):.3g}); "
                    "supply a positive Q0"
                )
    scale = _scale(box, starts)
    sbounds = list(zip(box[:, 0] / scale, box[:, 1] / scale))
    floor = S_FLOOR_RTOL * float(trapezoid(np.sum(zeta.node_values**2, axis=1), grid.nodes))

    n_evals = 0
    trace = []
    best = None
    failures = []
    for k, th0 in enumerate(starts):
        try:
            S0 = criterion_S(model, th0, lam, Q0, zeta, grid).S
        except DKFError as exc:
            failures.append(f"start {k}: {exc}")
            continue
        norm = max(abs(S0), floor, 1e-300)

        def fun(z):
            nonlocal n_evals
            n_evals += 1
            th = np.clip(z * scale, box[:, 0], box[:, 1])
            try:
                gv = grad_S(model, th, lam, Q0, zeta, grid, method=opts.gradient)
            except (ObservabilityError, DivergenceError):
                # a finite barrier lets the line search backtrack
                return FAILED_EVAL, np.zeros_like(z)
            if opts.keep_trace:
                trace.append((k, th.copy(), gv.S))
            return gv.S / norm, gv.grad * scale / norm

        res = optimize.minimize(
            fun, th0 / scale, jac=True, method="L-BFGS-B", bounds=sbounds,
            options={"maxiter": opts.max_iter, "gtol": opts.gtol, "ftol": opts.ftol},
        )
        th = np.clip(res.x * scale, box[:, 0], box[:, 1])
        S = res.fun * norm
        if not np.isfinite(S) or S > S0:
            th, S = th0, S0
        conv = bool(res.success)
        log.debug("dkf start %d: S %.6g -> %.6g (%s)", k, S0, S, res.message)
        if best is None or S < best[1]:
            best = (th, S, S0, conv, str(res.message))
    if best is None:
        raise NonConvergenceError("every start failed: " + "; ".join(failures))
    th, S, S0, conv, msg = best
    if not conv:
        # accept a stalled line search when the projected gradient is already small
        gv = grad_S(model, th, lam, Q0, zeta, grid, method=opts.gradient)
        pg = _projected_gradient(th / scale, gv.grad * scale, box / scale[:, None])
        conv = bool(np.max(np.abs(pg)) <= 1e-4 * max(abs(S), floor, 1e-300))
    path = integrate_adjoint(model, th, lam, Q0, zeta, grid)
    smoothed = smooth_trajectory(model, th, lam, path)
    result = EstimateResult("dkf", th, smoothed.x0_hat, S, S0, n_evals, conv, float(lam), smoothed, msg, trace)
    if not conv and opts.max_iter > 0:
        raise NonConvergenceError(f"no start converged ({msg})", result=result)
    return result


def _projected_gradient(z, g, sbox):
    """Gradient with components pointing out of the box zeroed."""
    pg = np.array(g, dtype=float)
    span = np.where(np.isfinite(sbox[:, 1] - sbox[:, 0]), sbox[:, 1] - sbox[:, 0], 1.0)
    at_lo = z <= sbox[:, 0] + 1e-10 * span
    at_hi = z >= sbox[:, 1] - 1e-10 * span
    pg[(at_lo & (pg > 0)) | (at_hi & (pg < 0))] = 0.0
    return pg


def _augmented_sweep(model, theta, x0, grid: TimeGrid):
    """State, parameter sensitivities and resolvant in one linear sweep."""
    d, p = model.d, model.p
    half = grid.half_nodes()
    A, r = model.sample(theta, half)
    dA, dr = model.sample_jacobians(theta, half)
    Mn = max(A.shape[0], dA.shape[0])
    D = d * (1 + p)
    M = np.zeros((Mn, D, D))
    B = np.zeros((max(r.shape[0], dr.shape[0]), D, 1 + d))
    for j in range(1 + p):
        M[:, j * d:(j + 1) * d, j * d:(j + 1) * d] = A
    for j in range(p):
        M[:, (j + 1) * d:(j + 2) * d, :d] = dA[:, j]
        B[:, (j + 1) * d:(j + 2) * d, 0] = dr[:, :, j]
    B[:, :d, 0] = r
    Z0 = np.zeros((D, 1 + d))
    Z0[:d, 0] = x0
    Z0[:d, 1:] = np.eye(d)
    Z, bad = kernels.linear_sweep(np.ascontiguousarray(M), np.ascontiguousarray(B), Z0, np.ascontiguousarray(grid.steps))
    if bad >= 0:
        raise DivergenceError(f"state diverged at node {bad}", node=int(bad), time=float(grid.nodes[bad]))
    X = Z[:, :d, 0]
    X_theta = Z[:, d:, 0].reshape(-1, p, d).transpose(0, 2, 1)
    Phi = Z[:, :d, 1:]
    return X, X_theta, Phi


def initial_state_lstsq(model, theta, obs, grid: Optional[TimeGrid] = None) -> np.ndarray:
    """Initial state minimizing the output misfit of the unforced model at ``theta``."""
    theta = model.check_theta(theta)
    grid = default_grid(max(model.T, obs.T), obs.n, obs.times) if grid is None else grid
    X, _, Phi = _augmented_sweep(model, theta, np.zeros(model.d), grid)
    idx = grid.locate(obs.times)
    G = np.einsum("oi,kij->koj", model.C, Phi[idx]).reshape(-1, model.d)
    resid = (obs.values - X[idx] @ model.C.T).reshape(-1)
    return np.linalg.lstsq(G, resid, rcond=None)[0]


def estimate_nls(
    model,
    obs,
    theta_init,
    x0_init=None,
    opts: EstimatorOptions = EstimatorOptions(n_starts=1),
    grid: Optional[TimeGrid] = None,
) -> EstimateResult:
    """Minimize ``sum_i |Y_i - C X_{theta, x0}(t_i)|^2`` jointly over ``(theta, x0)``.

    Uses a bounded trust-region Gauss-Newton method with the Jacobian from
    the sensitivity equations. ``x0_init`` defaults to the least-squares
    initial state at ``theta_init``. Additional random starts in
    ``opts.start_box`` are used when ``opts.n_starts > 1``.
    """
    box = _search_box(model, opts)
    grid = default_grid(max(model.T, obs.T), obs.n, obs.times) if grid is None else grid
    idx = grid.locate(obs.times)
    d, p, C = model.d, model.p, model.C
    starts = _start_points(model, theta_init, opts, box)
    scale = _scale(box, starts)
    n_evals = 0
    cache = {}

    def sweep(z):
        key = z.tobytes()
        if key not in cache:
            cache.clear()
            th = np.clip(z[:p], box[:, 0], box[:, 1])
            cache[key] = _augmented_sweep(model, th, z[p:], grid)
        return cache[key]

    def resid(z):
        nonlocal n_evals
        n_evals += 1
        try:
            X, _, _ = sweep(z)
        except DivergenceError:
            return np.full(obs.values.size, 1e150)
        return (X[idx] @ C.T - obs.values).reshape(-1)

    def jac(z):
        try:
            _, Xt, Phi = sweep(z)
        except DivergenceError:
            return np.zeros((obs.values.size, p + d))
        Jt = np.einsum("oi,kij->koj", C, Xt[idx])
        Jx = np.einsum("oi,kij->koj", C, Phi[idx])
        return np.concatenate([Jt, Jx], axis=2).reshape(-1, p + d)

    lo = np.concatenate([box[:, 0], np.full(d, -np.inf)])
    hi = np.concatenate([box[:, 1], np.full(d, np.inf)])
    best = None
    for k, th0 in enumerate(starts):
        if k == 0 and x0_init is not None:
            x0 = np.asarray(x0_init, float).reshape(d)
        else:
            x0 = initial_state_lstsq(model, th0, obs, grid)
        z0 = np.concatenate([th0, x0])
        r0 = resid(z0)
        rss0 = float(r0 @ r0)
        x_scale = np.concatenate([scale, np.maximum(np.abs(x0), 1.0)])
        res = optimize.least_squares(
            resid, z0, jac=jac, bounds=(lo, hi), method="trf", x_scale=x_scale,
            xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=opts.max_iter,
        )
        z, rss = res.x, float(2.0 * res.cost)
        if not np.isfinite(rss) or rss > rss0:
            z, rss = z0, rss0
        log.debug("nls start %d: RSS %.6g -> %.6g (%s)", k, rss0, rss, res.message)
        if best is None or rss < best[1]:
            best = (z, rss, rss0, bool(res.status > 0), str(res.message))
    z, rss, rss0, conv, msg = best
    return EstimateResult("nls", np.clip(z[:p], box[:, 0], box[:, 1]), z[p:].copy(), rss, rss0, n_evals, conv, message=msg)


def prediction_sse(model, theta, x0, obs, grid: Optional[TimeGrid] = None) -> float:
    """``sum_i |Y_i - C X_{theta, x0, 0}(t_i)|^2`` for the unperturbed model."""
    grid = default_grid(max(model.T, obs.T), obs.n, obs.times) if grid is None else grid
    X = duhamel_solution(model, theta, x0, None, grid).values[grid.locate(obs.times)]
    res = obs.values - X @ model.C.T
    return float(np.sum(res * res))


@dataclass
class LambdaSelection:
    grid: np.ndarray
    sse: np.ndarray
    chosen: float
    chosen_index: int
    estimates: list
    errors: dict

    @property
    def best(self) -> EstimateResult:
        return self.estimates[self.chosen_index]


def select_lambda(
    model,
    obs,
    zeta,
    lambda_grid: Sequence[float],
    opts: EstimatorOptions = EstimatorOptions(),
    theta_init=None,
    Q0=None,
    grid: Optional[TimeGrid] = None,
    tie_rtol: float = 1e-10,
) -> LambdaSelection:
    """Pick the penalty weight minimizing the prediction SSE of the unforced model.

    Candidates whose estimation fails get an infinite SSE and are reported in
    ``errors``. SSE values within ``tie_rtol * sum |Y_i|^2`` of the minimum
    count as ties, resolved toward the larger weight.
    """
    lams = np.asarray(list(lambda_grid), dtype=float)
    if lams.size == 0 or np.any(~(lams > 0)):
        raise ValueError("penalty grid must be a nonempty list of positive numbers")
    grid = default_grid(max(model.T, obs.T), obs.n, obs.times) if grid is None else grid
    if not (isinstance(zeta, SampledSignal) and zeta.grid is grid):
        zeta = SampledSignal(zeta, grid)
    sse = np.full(lams.size, np.inf)
    ests, errors = [None] * lams.size, {}
    for i, lam in enumerate(lams):
        try:
            est = estimate_dkf(model, obs, zeta, lam, opts, theta_init, Q0, grid)
        except NonConvergenceError as exc:
            if exc.result is None:
                errors[float(lam)] = str(exc)
                continue
            est = exc.result
        except DKFError as exc:
            errors[float(lam)] = str(exc)
            continue
        ests[i] = est
        sse[i] = prediction_sse(model, est.theta_hat, est.x0_hat, obs, grid)
    if not np.any(np.isfinite(sse)):
        raise NonConvergenceError("estimation failed for every penalty weight: " + "; ".join(errors.values()))
    tol = tie_rtol * float(np.sum(obs.values**2))
    ok = np.flatnonzero(sse <= np.min(sse) + tol)
    k = int(ok[np.argmax(lams[ok])])
    return LambdaSelection(lams, sse, float(lams[k]), k, ests, errors)
