"""Monte-Carlo experiment runner and report writer.

A configuration names a registered model and the simulation design. Each
replicate simulates noisy outputs and smooths them with a regression spline.
It then estimates the parameters with the selected estimators and scores the
estimates against the known truth.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import simpson
from scipy.signal import find_peaks

from .errors import ConfigError, DKFError
from .estimators import EstimatorOptions, estimate_nls, select_lambda
from .integrate import TimeGrid, Trajectory, default_grid, duhamel_solution
from .models import get_model, registered_models
from .observations import ObservationSet, make_rng, observation_times, true_trajectory
from .spline import SplineBasis, fit_regression_spline, gcv_select_knots

__all__ = [
    "CSV_HEADER",
    "ExperimentAborted",
    "ExperimentConfig",
    "ExperimentResult",
    "MetricsTable",
    "builtin_configs",
    "compute_metrics",
    "dominant_period",
    "evaluate_checks",
    "emit_report",
    "load_config",
    "read_metrics_csv",
    "run_experiment",
    "run_replicate",
]

log = logging.getLogger(__name__)

CSV_HEADER = ["(n,sigma)", "estimator", "MSE", "ARE", "EP_param", "EP_corrected", "Delta_param", "Delta_corrected"]
METRIC_KEYS = CSV_HEADER[2:]
ESTIMATORS = ("dkf", "nls")
U_GRID_POINTS = 1001
CONFIG_DIR = Path(__file__).parent / "configs"
CHECKS = ("dkf_are_range", "dkf_vs_nls_are", "ep_corrected_ratio", "delta_corrected_ratio", "u_period")


class ExperimentAborted(DKFError):
    """More than half of the replicates failed for some estimator."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Simulation design of a Monte-Carlo study.

    ``knots`` is the number of uniform spline knots including both
    boundaries; when ``gcv_knots`` lists candidate counts, the count is
    picked per replicate by generalized cross-validation instead.
    ``start_box`` and ``nls_bounds`` are multiples of ``theta_star``.
    """

    model: str
    n: int
    sigma: float
    lambda_grid: tuple
    name: str = ""
    theta_star: Optional[tuple] = None
    x0_star: Optional[tuple] = None
    T: Optional[float] = None
    sampling: str = "equispaced"
    perturb: bool = True
    knots: int = 4
    gcv_knots: Optional[tuple] = None
    degree: int = 3
    estimators: tuple = ESTIMATORS
    n_mc: int = 20
    seed: int = 0
    n_starts: int = 2
    max_iter: int = 200
    gtol: float = 1e-6
    start_box: tuple = (0.5, 2.0)
    nls_bounds: tuple = (0.1, 10.0)
    trim_factor: float = 10.0
    grid_nodes: Optional[int] = None
    workers: int = 1
    out_dir: str = "out"
    checks: Optional[dict] = None

    def __post_init__(self):
        if self.model not in registered_models():
            raise ConfigError(f"unknown model {self.model!r}; registered: {registered_models()}")
        m = get_model(self.model)
        lams = tuple(float(x) for x in self.lambda_grid)
        if "dkf" in self.estimators and (not lams or any(not (x > 0 and math.isfinite(x)) for x in lams)):
            raise ConfigError("lambda_grid must be a nonempty list of positive numbers")
        object.__setattr__(self, "lambda_grid", lams)
        est = tuple(self.estimators)
        bad = [e for e in est if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimators {bad}; choose from {list(ESTIMATORS)}")
        object.__setattr__(self, "estimators", est)
        if self.n_mc < 1:
            raise ConfigError("n_mc must be at least 1")
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        if not self.sigma >= 0:
            raise ConfigError("sigma must be nonnegative")
        if self.sampling not in ("equispaced", "uniform"):
            raise ConfigError(f"unknown sampling scheme {self.sampling!r}")
        if self.theta_star is not None and len(self.theta_star) != m.p:
            raise ConfigError(f"theta_star needs {m.p} entries")
        if self.x0_star is not None and len(self.x0_star) != m.d:
            raise ConfigError(f"x0_star needs {m.d} entries")
        if self.gcv_knots is not None:
            object.__setattr__(self, "gcv_knots", tuple(int(k) for k in self.gcv_knots))
        for key in ("start_box", "nls_bounds"):
            v = tuple(float(x) for x in getattr(self, key))
            if len(v) != 2 or not 0 < v[0] <= v[1]:
                raise ConfigError(f"{key} must be two increasing positive factors")
            object.__setattr__(self, key, v)
        if self.knots < 2:
            raise ConfigError("knots counts both boundaries and must be at least 2")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.checks is not None:
            unknown = sorted(set(self.checks) - set(CHECKS))
            if unknown:
                raise ConfigError(f"unknown checks {unknown}; available: {sorted(CHECKS)}")
        for key in ("theta_star", "x0_star"):
            if getattr(self, key) is not None:
                object.__setattr__(self, key, tuple(float(x) for x in getattr(self, key)))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys {unknown}")
        missing = [k for k in ("model", "n", "sigma") if k not in data]
        if missing:
            raise ConfigError(f"missing configuration keys {missing}")
        data = dict(data)
        data.setdefault("lambda_grid", ())
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    @property
    def model_spec(self):
        return get_model(self.model)

    @property
    def theta(self) -> np.ndarray:
        return np.asarray(self.theta_star if self.theta_star is not None else self.model_spec.theta_star, float)

    @property
    def x0(self) -> np.ndarray:
        return np.asarray(self.x0_star if self.x0_star is not None else self.model_spec.x0_star, float)

    @property
    def horizon(self) -> float:
        return float(self.T if self.T is not None else self.model_spec.T)

    @property
    def label(self) -> str:
        return f"({self.n},{self.sigma:g})"


def builtin_configs() -> list:
    """Names of the configurations shipped with the package."""
    return sorted(p.stem for p in CONFIG_DIR.glob("*.json"))


def load_config(path) -> ExperimentConfig:
    """Read a JSON configuration file, or a shipped one by name (``"toy1"``)."""
    if not Path(path).exists() and str(path) in builtin_configs():
        path = CONFIG_DIR / f"{path}.json"
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return ExperimentConfig.from_dict(data)


def _l2(grid, diff) -> float:
    return float(np.sqrt(simpson(np.sum(diff * diff, axis=1), x=grid.nodes)))


def compute_metrics(theta_star, theta_hat, C, Y_new, X_param_obs, X_corr_obs, hidden, grid, X_true, X_param, X_corr) -> dict:
    """Score one estimate.

    ``X_*_obs`` are states at the observation times; ``X_true``, ``X_param``
    and ``X_corr`` are states on the nodes of ``grid``. ``hidden`` indexes
    the unobserved state components.
    """
    theta_star = np.asarray(theta_star, float)
    err = np.asarray(theta_hat, float) - theta_star
    out = {
        "MSE": float(np.mean(err**2)),
        "ARE": float(np.mean(np.abs(err) / np.abs(theta_star))),
    }
    for key, Xo, Xg in (("param", X_param_obs, X_param), ("corrected", X_corr_obs, X_corr)):
        res = Y_new - Xo @ C.T
        out[f"EP_{key}"] = float(np.sqrt(np.mean(np.sum(res * res, axis=1))))
        out[f"Delta_{key}"] = _l2(grid, (X_true - Xg)[:, hidden]) if len(hidden) else 0.0
    return out


def _replicate_seeds(seed, n_mc):
    return np.random.SeedSequence(seed).spawn(n_mc)


def run_replicate(cfg: ExperimentConfig, index: int, ss: Optional[np.random.SeedSequence] = None) -> dict:
    """Simulate, smooth, estimate and score one replicate.

    Returns a JSON-ready record; estimator failures are stored in it rather
    than raised.
    """
    m = cfg.model_spec
    if ss is None:
        ss = _replicate_seeds(cfg.seed, cfg.n_mc)[index]
    s_times, s_noise, s_fresh, s_start = ss.spawn(4)
    theta, x0, T = cfg.theta, cfg.x0, cfg.horizon
    times = observation_times(cfg.n, T, cfg.sampling, make_rng(s_times))
    if cfg.grid_nodes is None:
        grid = default_grid(T, cfg.n, times)
    else:
        grid = TimeGrid.including(T, cfg.grid_nodes, times)
    X_true = true_trajectory(m, theta, x0, grid, perturb=cfg.perturb).values
    idx = grid.locate(times)
    clean = X_true[idx] @ m.C.T
    Y = clean + cfg.sigma * make_rng(s_noise).standard_normal(clean.shape)
    Y_new = clean + cfg.sigma * make_rng(s_fresh).standard_normal(clean.shape)
    obs = ObservationSet(times, Y, cfg.sigma)
    rec = {"replicate": index, "estimators": {}}

    if cfg.gcv_knots:
        basis, _ = gcv_select_knots(obs, cfg.gcv_knots, cfg.degree, T)
    else:
        basis = SplineBasis.uniform(T, cfg.knots, cfg.degree)
    rec["knots"] = basis.n_knots
    smooth = fit_regression_spline(obs, basis)
    start_seed = int(s_start.generate_state(1)[0])
    start_box = np.column_stack([theta * cfg.start_box[0], theta * cfg.start_box[1]])
    hidden = m.hidden_components

    if "dkf" in cfg.estimators:
        try:
            opts = EstimatorOptions(
                max_iter=cfg.max_iter, gtol=cfg.gtol, n_starts=cfg.n_starts, seed=start_seed, start_box=start_box
            )
            sel = select_lambda(m, obs, smooth, cfg.lambda_grid, opts, grid=grid)
            est = sel.best
            X_par = duhamel_solution(m, est.theta_hat, est.x0_hat, None, grid).values
            X_cor = est.smoothed.X
            met = compute_metrics(theta, est.theta_hat, m.C, Y_new, X_par[idx], X_cor[idx], hidden, grid, X_true, X_par, X_cor)
            rec["estimators"]["dkf"] = {
                "theta_hat": est.theta_hat.tolist(),
                "x0_hat": est.x0_hat.tolist(),
                "S": est.S_final,
                "lambda": sel.chosen,
                "sse": sel.sse.tolist(),
                "converged": est.converged,
                "metrics": met,
                "u_bar": Trajectory(grid, est.smoothed.u_bar).at(np.linspace(0.0, T, U_GRID_POINTS)).tolist(),
            }
        except DKFError as exc:
            log.warning("replicate %d: dkf failed: %s", index, exc)
            rec["estimators"]["dkf"] = {"error": str(exc)}

    if "nls" in cfg.estimators:
        try:
            rng = make_rng(start_seed)
            th0 = theta * rng.uniform(cfg.start_box[0], cfg.start_box[1], size=theta.size)
            bounds = np.column_stack([theta * cfg.nls_bounds[0], theta * cfg.nls_bounds[1]])
            opts = EstimatorOptions(max_iter=cfg.max_iter, n_starts=1, bounds=bounds)
            est = estimate_nls(m, obs, th0, None, opts, grid)
            X_par = duhamel_solution(m, est.theta_hat, est.x0_hat, None, grid).values
            # no correction exists for the NLS fit: both columns use the parametric solution
            met = compute_metrics(theta, est.theta_hat, m.C, Y_new, X_par[idx], X_par[idx], hidden, grid, X_true, X_par, X_par)
            rec["estimators"]["nls"] = {
                "theta_hat": est.theta_hat.tolist(),
                "x0_hat": est.x0_hat.tolist(),
                "RSS": est.RSS_final,
                "converged": est.converged,
                "metrics": met,
            }
        except DKFError as exc:
            log.warning("replicate %d: nls failed: %s", index, exc)
            rec["estimators"]["nls"] = {"error": str(exc)}
    return rec


@dataclass
class MetricsTable:
    """Per-estimator means of the metrics over successful replicates."""

    label: str
    rows: dict = field(default_factory=dict)

    def to_rows(self):
        return [[self.label, est] + [row["raw"][k] for k in METRIC_KEYS] for est, row in self.rows.items()]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list
    table: MetricsTable
    u_times: np.ndarray
    u_mean: Optional[np.ndarray]


def _aggregate(cfg, runs) -> MetricsTable:
    table = MetricsTable(cfg.label)
    for est in cfg.estimators:
        recs = [r["estimators"][est] for r in runs]
        ok = [r for r in recs if "metrics" in r]
        n_fail = len(recs) - len(ok)
        if n_fail > 0.5 * len(recs):
            raise ExperimentAborted(f"{est}: {n_fail} of {len(recs)} replicates failed")
        mets = {k: np.array([r["metrics"][k] for r in ok]) for k in METRIC_KEYS}
        are = mets["ARE"]
        keep = are <= cfg.trim_factor * np.median(are)
        table.rows[est] = {
            "raw": {k: float(np.mean(v)) for k, v in mets.items()},
            "trimmed": {k: float(np.mean(v[keep])) for k, v in mets.items()},
            "std": {k: float(np.std(v, ddof=1)) if v.size > 1 else 0.0 for k, v in mets.items()},
            "n_runs": len(ok),
            "n_failed": n_fail,
            "n_trimmed": int(np.sum(~keep)),
        }
    return table


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run all replicates and aggregate them in replicate order."""
    seeds = _replicate_seeds(cfg.seed, cfg.n_mc)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            runs = list(pool.map(run_replicate, [cfg] * cfg.n_mc, range(cfg.n_mc), seeds))
    else:
        runs = [run_replicate(cfg, i, s) for i, s in enumerate(seeds)]
    runs.sort(key=lambda r: r["replicate"])
    table = _aggregate(cfg, runs)
    u_times = np.linspace(0.0, cfg.horizon, U_GRID_POINTS)
    us = [r["estimators"]["dkf"]["u_bar"] for r in runs if "u_bar" in r["estimators"].get("dkf", {})]
    u_mean = np.mean(np.array(us), axis=0) if us else None
    return ExperimentResult(cfg, runs, table, u_times, u_mean)


def _fmt(x) -> str:
    return repr(float(x))


def emit_report(result: ExperimentResult, out_dir=None) -> dict:
    """Write ``metrics.csv``, ``metrics.json``, ``runs.json`` and ``u_mean.csv``.

    Floats are written with ``repr`` so identical runs give identical bytes.
    Returns the written paths by name.
    """
    out = Path(out_dir if out_dir is not None else result.config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    p = out / "metrics.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in result.table.to_rows():
            w.writerow(row[:2] + [_fmt(x) for x in row[2:]])
    paths["metrics.csv"] = p

    p = out / "metrics.json"
    doc = {
        "config": result.config.to_dict(),
        "label": result.table.label,
        "conventions": {
            "MSE": "mean over parameter coordinates of squared error",
            "ARE": "mean over parameter coordinates of |theta* - theta_hat| / |theta*|",
            "EP": "root mean square over observation times of the Euclidean error against a fresh noisy replicate",
            "Delta": "L2 norm on [0, T] of the error in the unobserved state components",
            "trimmed": f"runs with ARE > {result.config.trim_factor:g} x median ARE dropped",
        },
        "estimators": result.table.rows,
    }
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    paths["metrics.json"] = p

    p = out / "runs.json"
    slim = []
    for r in result.runs:
        r = json.loads(json.dumps(r))
        r["estimators"].get("dkf", {}).pop("u_bar", None)
        slim.append(r)
    p.write_text(json.dumps(slim, indent=2, sort_keys=True) + "\n")
    paths["runs.json"] = p

    if result.u_mean is not None:
        p = out / "u_mean.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "component", "mean_u"])
            for j in range(result.u_mean.shape[1]):
                for t, u in zip(result.u_times, result.u_mean[:, j]):
                    w.writerow([_fmt(t), j + 1, _fmt(u)])
        paths["u_mean.csv"] = p
    return paths


def read_metrics_csv(path):
    """Parse ``metrics.csv`` back into ``[(label, estimator, {metric: value})]``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header")
    return [(r[0], r[1], {k: float(v) for k, v in zip(METRIC_KEYS, r[2:])}) for r in rows[1:]]


def dominant_period(t, u) -> float:
    """Oscillation period from the median spacing of same-sign extrema.

    Spacings between consecutive maxima and between consecutive minima of
    every component are pooled. Returns ``nan`` without two extrema of a kind.
    """
    t = np.asarray(t, float)
    u = np.asarray(u, float).reshape(t.size, -1)
    gaps = []
    for j in range(u.shape[1]):
        col = u[:, j]
        prom = 0.1 * (col.max() - col.min())
        if prom <= 0:
            continue
        for sign in (1.0, -1.0):
            pk, _ = find_peaks(sign * col, prominence=prom)
            gaps.extend(np.diff(t[pk]))
    return float(np.median(gaps)) if gaps else float("nan")


def evaluate_checks(result: ExperimentResult, checks: Optional[dict] = None) -> list:
    """Evaluate the configured assertions on an experiment.

    Returns ``[(name, passed, detail)]``. Available checks:

    ``dkf_are_range: [lo, hi]``
        mean DKF ARE inside the interval;
    ``dkf_vs_nls_are: f``
        DKF ARE at most ``f`` times NLS ARE;
    ``ep_corrected_ratio: f``
        DKF corrected E_P at most ``f`` times parametric E_P;
    ``delta_corrected_ratio: f``
        same for the hidden-state discrepancy;
    ``u_period: [P, rtol]``
        dominant period of the mean control within ``rtol`` of ``P``.
    """
    checks = result.config.checks if checks is None else checks
    rows = result.table.rows
    out = []
    for name, arg in (checks or {}).items():
        try:
            dkf = rows["dkf"]["raw"]
            if name == "dkf_are_range":
                ok = arg[0] <= dkf["ARE"] <= arg[1]
                detail = f"ARE {dkf['ARE']:.4g} in [{arg[0]:g}, {arg[1]:g}]"
            elif name == "dkf_vs_nls_are":
                nls = rows["nls"]["raw"]["ARE"]
                ok = dkf["ARE"] <= arg * nls
                detail = f"ARE dkf {dkf['ARE']:.4g} <= {arg:g} x nls {nls:.4g}"
            elif name == "ep_corrected_ratio":
                ok = dkf["EP_corrected"] <= arg * dkf["EP_param"]
                detail = f"EP corrected {dkf['EP_corrected']:.6g} <= {arg:g} x parametric {dkf['EP_param']:.6g}"
            elif name == "delta_corrected_ratio":
                ok = dkf["Delta_corrected"] <= arg * dkf["Delta_param"]
                detail = f"Delta corrected {dkf['Delta_corrected']:.6g} <= {arg:g} x parametric {dkf['Delta_param']:.6g}"
            elif name == "u_period":
                if result.u_mean is None:
                    raise KeyError("mean control")
                P = dominant_period(result.u_times, result.u_mean)
                ok = abs(P - arg[0]) <= arg[1] * arg[0]
                detail = f"period {P:.4g} within {100 * arg[1]:g}% of {arg[0]:.4g}"
            else:
                raise ConfigError(f"unknown check {name!r}")
        except KeyError as exc:
            ok, detail = False, f"missing estimator output {exc}"
        out.append((name, bool(ok), detail))
    return out
