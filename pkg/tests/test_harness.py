import json

import numpy as np
import pytest

from dkf_ode import ConfigError, DKFError, TimeGrid
from dkf_ode import harness
from dkf_ode.harness import (
    CSV_HEADER,
    ExperimentAborted,
    ExperimentConfig,
    ExperimentResult,
    MetricsTable,
    builtin_configs,
    compute_metrics,
    dominant_period,
    emit_report,
    evaluate_checks,
    load_config,
    read_metrics_csv,
    run_experiment,
)

SMALL = dict(model="toy1", n=60, sigma=1.0, lambda_grid=[1e6, 1e10], n_mc=2, seed=5, n_starts=1, grid_nodes=1201)


@pytest.fixture(scope="module")
def small_result():
    return run_experiment(ExperimentConfig.from_dict(SMALL))


def test_metric_hand_cases():
    grid = TimeGrid.uniform(1.0, 11)
    X = np.zeros((11, 2))
    C = np.array([[0.0, 1.0]])
    Y = np.zeros((3, 1))
    Xo = np.zeros((3, 2))
    met = compute_metrics([2.0], [1.0], C, Y, Xo, Xo, [0], grid, X, X, X)
    assert met["ARE"] == 0.5 and met["MSE"] == 1.0
    assert met["EP_param"] == 0.0 and met["Delta_param"] == 0.0
    # a constant error of 2 in the hidden component over [0, 1] has L2 norm 2
    off = X.copy()
    off[:, 0] = 2.0
    # output errors of (3, 4) at two times give an RMS Euclidean error of 5
    Xo2 = np.array([[0.0, 3.0], [0.0, 4.0], [0.0, 5.0]])
    met = compute_metrics([1.0, 4.0], [1.5, 3.0], C, np.zeros((3, 1)), Xo2, Xo, [0], grid, X, off, X)
    assert met["ARE"] == pytest.approx((0.5 + 0.25) / 2)
    assert met["MSE"] == pytest.approx((0.25 + 1.0) / 2)
    assert met["EP_param"] == pytest.approx(np.sqrt((9 + 16 + 25) / 3))
    assert met["EP_corrected"] == 0.0
    assert met["Delta_param"] == pytest.approx(2.0)
    assert met["Delta_corrected"] == 0.0


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": "toy1", "n": 10})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "model": "lorenz"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "lambda_grid": [1.0, -2.0]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "estimators": ["gs"]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "checks": {"MSE_below": 1}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "theta_star": [0.1]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "start_box": [2.0, 1.0]})
    # a pure NLS study needs no penalty grid
    cfg = ExperimentConfig.from_dict({**SMALL, "lambda_grid": [], "estimators": ["nls"]})
    assert cfg.estimators == ("nls",)


def test_config_round_trip_and_overrides(tmp_path):
    cfg = ExperimentConfig.from_dict(SMALL)
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert cfg.with_overrides(seed=None, n_mc=None) is cfg
    assert cfg.with_overrides(seed=9).seed == 9
    assert cfg.label == "(60,1)"
    p = tmp_path / "c.json"
    p.write_text(json.dumps(SMALL))
    assert load_config(p) == cfg
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(p)


def test_builtin_configs():
    assert set(builtin_configs()) == {"toy1", "toy2", "methanation"}
    toy1 = load_config("toy1")
    # [PAPER] penalty grid 10^5 ... 10^16, 200 samples, sigma 3
    assert toy1.lambda_grid == tuple(10.0**k for k in range(5, 17))
    assert (toy1.n, toy1.sigma) == (200, 3.0)
    meth = load_config("methanation")
    assert (meth.n, meth.sigma) == (100, 0.002)
    assert meth.x0.tolist() == [0.0, 0.0, 0.0, 0.0]


def test_determinism_and_workers(tmp_path, small_result):
    a = emit_report(small_result, tmp_path / "a")
    b = emit_report(run_experiment(ExperimentConfig.from_dict(SMALL)), tmp_path / "b")
    c = emit_report(run_experiment(ExperimentConfig.from_dict({**SMALL, "workers": 2})), tmp_path / "c")
    for name in ("metrics.csv", "runs.json", "u_mean.csv"):
        assert a[name].read_bytes() == b[name].read_bytes() == c[name].read_bytes()


def test_report_contents(tmp_path, small_result):
    paths = emit_report(small_result, tmp_path)
    rows = read_metrics_csv(paths["metrics.csv"])
    assert [r[1] for r in rows] == ["dkf", "nls"]
    for label, est, vals in rows:
        assert label == "(60,1)"
        assert vals == small_result.table.rows[est]["raw"]
    # no correction for NLS: parametric and corrected columns coincide exactly
    nls = small_result.table.rows["nls"]["raw"]
    assert nls["EP_param"] == nls["EP_corrected"] and nls["Delta_param"] == nls["Delta_corrected"]
    doc = json.loads(paths["metrics.json"].read_text())
    assert "ARE" in doc["conventions"] and doc["label"] == "(60,1)"
    runs = json.loads(paths["runs.json"].read_text())
    assert len(runs) == 2 and "u_bar" not in runs[0]["estimators"]["dkf"]
    assert {"theta_hat", "x0_hat", "S", "lambda"} <= set(runs[0]["estimators"]["dkf"])
    lines = paths["u_mean.csv"].read_text().splitlines()
    assert lines[0] == "t,component,mean_u"
    assert len(lines) == 1 + 3 * harness.U_GRID_POINTS
    for est in ("dkf", "nls"):
        row = small_result.table.rows[est]
        assert row["n_runs"] == 2 and row["n_failed"] == 0
        assert row["raw"]["ARE"] >= 0 and row["raw"]["MSE"] >= 0


def test_header_only_csv(tmp_path):
    cfg = ExperimentConfig.from_dict({**SMALL, "estimators": [], "n_mc": 1})
    res = run_experiment(cfg)
    paths = emit_report(res, tmp_path)
    # the first header field contains a comma, so CSV quoting applies
    assert paths["metrics.csv"].read_text() == '"(n,sigma)",' + ",".join(CSV_HEADER[1:]) + "\n"
    assert read_metrics_csv(paths["metrics.csv"]) == []
    assert "u_mean.csv" not in paths


def test_noiseless_recovery():
    cfg = ExperimentConfig.from_dict({**SMALL, "sigma": 0.0, "n_mc": 1, "gcv_knots": list(range(4, 21)), "lambda_grid": [1e8]})
    res = run_experiment(cfg)
    for est in ("dkf", "nls"):
        assert res.table.rows[est]["raw"]["ARE"] <= 1e-3


def test_abort_when_most_runs_fail(monkeypatch):
    def broken(*args, **kwargs):
        raise DKFError("synthetic failure")

    monkeypatch.setattr(harness, "estimate_nls", broken)
    cfg = ExperimentConfig.from_dict({**SMALL, "estimators": ["nls"], "lambda_grid": []})
    rec = harness.run_replicate(cfg, 0)
    assert rec["estimators"]["nls"] == {"error": "synthetic failure"}
    with pytest.raises(ExperimentAborted):
        run_experiment(cfg)


def _fake_result(rows, checks, u=None):
    cfg = ExperimentConfig.from_dict({**SMALL, "checks": checks})
    table = MetricsTable(cfg.label, {k: {"raw": v} for k, v in rows.items()})
    t = np.linspace(0, 100, 1001)
    return ExperimentResult(cfg, [], table, t, u)


def test_evaluate_checks():
    dkf = {"ARE": 0.05, "EP_param": 2.0, "EP_corrected": 0.9, "Delta_param": 1.0, "Delta_corrected": 1.1}
    t = np.linspace(0, 100, 1001)
    u = np.column_stack([np.sin(t / 5)] * 3)
    checks = {
        "dkf_are_range": [0.03, 0.07],
        "dkf_vs_nls_are": 1.2,
        "ep_corrected_ratio": 0.5,
        "delta_corrected_ratio": 1.0,
        "u_period": [10 * np.pi, 0.2],
    }
    out = dict((n, ok) for n, ok, _ in evaluate_checks(_fake_result({"dkf": dkf, "nls": {"ARE": 0.045}}, checks, u)))
    assert out == {"dkf_are_range": True, "dkf_vs_nls_are": True, "ep_corrected_ratio": True,
                   "delta_corrected_ratio": False, "u_period": True}
    missing = evaluate_checks(_fake_result({"dkf": dkf}, {"dkf_vs_nls_are": 1.0}))
    assert missing[0][1] is False and "missing" in missing[0][2]


def test_dominant_period():
    t = np.linspace(0, 100, 1001)
    assert dominant_period(t, np.sin(t / 5)) == pytest.approx(10 * np.pi, rel=0.01)
    noisy = np.sin(t / 5) + 0.05 * np.random.default_rng(0).standard_normal(t.size)
    assert dominant_period(t, noisy) == pytest.approx(10 * np.pi, rel=0.05)
    assert np.isnan(dominant_period(t, np.ones_like(t)))
    assert np.isnan(dominant_period(t, t))


def test_finer_smoother_resolves_model_error_period():
    # [DERIVED] with 12 knots the mean control of the misspecified model tracks
    # the period 10 pi of the perturbation 0.4 sin(t / 5)
    cfg = load_config("toy2").with_overrides(knots=12, n_mc=4, estimators=("dkf",), lambda_grid=(1e5, 1e7, 1e9))
    res = run_experiment(cfg)
    P = dominant_period(res.u_times, res.u_mean)
    assert abs(P - 10 * np.pi) <= 0.2 * 10 * np.pi, P
