"""Command line entry point ``dkf-ode``.

Subcommands
-----------
simulate   write one simulated data set as CSV
estimate   fit one CSV data set with the configured estimators
bench      run a Monte-Carlo experiment and write its report
verify     compare the closed-form criterion with the brute-force oracle
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import DKFError
from .estimators import EstimatorOptions, estimate_nls, select_lambda
from .harness import builtin_configs, emit_report, evaluate_checks, load_config, run_experiment
from .integrate import default_grid
from .observations import ObservationSet, observation_times, simulate_observations
from .spline import SplineBasis, fit_regression_spline, gcv_select_knots

log = logging.getLogger("dkf_ode")


def _lambda_list(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("penalty weights must be positive")
    return vals


def _common(p):
    p.add_argument("config", help=f"JSON config file or built-in name ({', '.join(builtin_configs())})")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-dir", help="override the output directory")
    p.add_argument("--n-mc", type=int, help="override the number of Monte-Carlo replicates")
    p.add_argument("--lambda-grid", type=_lambda_list, help="comma-separated penalty weights")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dkf-ode", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one data set")
    _common(p)
    p.add_argument("--output", help="CSV path (default: <out-dir>/observations.csv)")

    p = sub.add_parser("estimate", help="estimate parameters from a CSV data set")
    _common(p)
    p.add_argument("--data", required=True, help="CSV with header t,y1,...")

    p = sub.add_parser("bench", help="run a Monte-Carlo experiment")
    _common(p)
    p.add_argument("--check", action="store_true", help="evaluate the config's assertions; exit 1 on failure")
    p.add_argument("--workers", type=int, help="worker processes")

    p = sub.add_parser("verify", help="certify the criterion against the brute-force oracle")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intervals", type=int, default=200, help="control intervals of the oracle")
    return ap


def _config(args):
    cfg = load_config(args.config)
    lam = tuple(args.lambda_grid) if args.lambda_grid else None
    return cfg.with_overrides(seed=args.seed, out_dir=args.out_dir, n_mc=args.n_mc, lambda_grid=lam,
                              workers=getattr(args, "workers", None))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    m = cfg.model_spec
    rng = np.random.default_rng(cfg.seed)
    times = observation_times(cfg.n, cfg.horizon, cfg.sampling, rng)
    obs = simulate_observations(m, cfg.theta, cfg.x0, times, cfg.sigma, seed=cfg.seed, perturb=cfg.perturb)
    out = Path(args.output) if args.output else Path(cfg.out_dir) / "observations.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    obs.to_csv(out)
    print(out)
    return 0


def cmd_estimate(args) -> int:
    cfg = _config(args)
    m = cfg.model_spec
    obs = ObservationSet.from_csv(args.data)
    if obs.d_obs != m.d_obs:
        raise DKFError(f"{args.data} has {obs.d_obs} output columns, model {m.name} has {m.d_obs}")
    T = max(cfg.horizon, obs.T)
    grid = default_grid(T, obs.n, obs.times)
    if cfg.gcv_knots:
        basis, _ = gcv_select_knots(obs, cfg.gcv_knots, cfg.degree, T)
    else:
        basis = SplineBasis.uniform(T, cfg.knots, cfg.degree)
    smooth = fit_regression_spline(obs, basis)
    theta = cfg.theta
    start_box = np.column_stack([theta * cfg.start_box[0], theta * cfg.start_box[1]])
    report = {"data": str(args.data), "model": m.name}
    if "dkf" in cfg.estimators:
        opts = EstimatorOptions(max_iter=cfg.max_iter, gtol=cfg.gtol, n_starts=cfg.n_starts, seed=cfg.seed, start_box=start_box)
        sel = select_lambda(m, obs, smooth, cfg.lambda_grid, opts, grid=grid)
        best = sel.best
        report["dkf"] = {
            "theta_hat": best.theta_hat.tolist(),
            "x0_hat": best.x0_hat.tolist(),
            "lambda": sel.chosen,
            "S": best.S_final,
            "sse": dict(zip(map(repr, sel.grid.tolist()), sel.sse.tolist())),
            "converged": best.converged,
        }
    if "nls" in cfg.estimators:
        bounds = np.column_stack([theta * cfg.nls_bounds[0], theta * cfg.nls_bounds[1]])
        est = estimate_nls(m, obs, theta, None, EstimatorOptions(max_iter=cfg.max_iter, n_starts=1, bounds=bounds), grid)
        report["nls"] = {"theta_hat": est.theta_hat.tolist(), "x0_hat": est.x0_hat.tolist(), "RSS": est.RSS_final,
                         "converged": est.converged}
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "estimate.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    t0 = time.perf_counter()
    result = run_experiment(cfg)
    paths = emit_report(result)
    elapsed = time.perf_counter() - t0
    print(f"{cfg.name or cfg.model} {cfg.label}: {cfg.n_mc} replicates in {elapsed:.1f} s")
    for est, row in result.table.rows.items():
        raw = row["raw"]
        print(
            f"  {est:4s} ARE {raw['ARE']:.4g}  MSE {raw['MSE']:.4g}  EP {raw['EP_param']:.4g}/{raw['EP_corrected']:.4g}"
            f"  Delta {raw['Delta_param']:.4g}/{raw['Delta_corrected']:.4g}  failed {row['n_failed']}"
        )
    for name, p in paths.items():
        print(f"  wrote {p}")
    failed_runs = sum(row["n_failed"] for row in result.table.rows.values())
    code = 0 if failed_runs == 0 else 1
    if args.check:
        for name, ok, detail in evaluate_checks(result):
            print(f"  [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
            code = code or (0 if ok else 1)
    return code


def cmd_verify(args) -> int:
    from .verify import run_oracle_suite

    checks = run_oracle_suite(args.instances, args.seed, args.intervals)
    print(f"{'status':6s}  {'S rel err':>9s}  {'x0 err':>9s}  {'u rms':>9s}  instance")
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL':6s}  {c.S_error:9.2e}  {c.x0_error:9.2e}  {c.u_rms_error:9.2e}  {c.label}")
    n_ok = sum(c.passed for c in checks)
    print(f"{n_ok}/{len(checks)} instances agree")
    return 0 if n_ok == len(checks) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"simulate": cmd_simulate, "estimate": cmd_estimate, "bench": cmd_bench, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except (DKFError, OSError) as exc:
        print(f"dkf-ode: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
