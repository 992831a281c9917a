import json
import subprocess
import sys

import pytest

from dkf_ode.cli import build_parser, main

SMALL = dict(model="toy1", n=40, sigma=1.0, lambda_grid=[1e8], n_mc=1, seed=2, n_starts=1, grid_nodes=801)


@pytest.fixture
def cfg_file(tmp_path):
    def make(**kw):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({**SMALL, **kw}))
        return str(p)

    return make


def test_simulate_then_estimate(tmp_path, cfg_file, capsys):
    cfg = cfg_file()
    out = tmp_path / "obs.csv"
    assert main(["simulate", cfg, "--output", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "t,y1,y2"
    capsys.readouterr()
    assert main(["estimate", cfg, "--data", str(out), "--out-dir", str(tmp_path / "est"), "--lambda-grid", "1e6,1e9"]) == 0
    report = json.loads((tmp_path / "est" / "estimate.json").read_text())
    assert set(report) >= {"dkf", "nls", "model"}
    assert report["dkf"]["lambda"] in (1e6, 1e9)
    assert len(report["nls"]["theta_hat"]) == 2
    assert json.loads(capsys.readouterr().out) == report


def test_simulate_default_output(tmp_path, cfg_file):
    assert main(["simulate", cfg_file(), "--out-dir", str(tmp_path / "o"), "--seed", "4"]) == 0
    assert (tmp_path / "o" / "observations.csv").exists()


def test_estimate_rejects_wrong_channels(tmp_path, cfg_file):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,y1\n0,1\n1,2\n2,3\n")
    assert main(["estimate", cfg_file(), "--data", str(bad)]) == 2


def test_bench_writes_report_and_checks(tmp_path, cfg_file, capsys):
    out = tmp_path / "bench"
    assert main(["bench", cfg_file(checks={"dkf_are_range": [0.0, 10.0]}), "--out-dir", str(out), "--check"]) == 0
    text = capsys.readouterr().out
    assert "[PASS] dkf_are_range" in text
    assert (out / "metrics.csv").exists() and (out / "u_mean.csv").exists()
    # an impossible assertion turns into exit code 1
    assert main(["bench", cfg_file(checks={"dkf_are_range": [5.0, 6.0]}), "--out-dir", str(out), "--check"]) == 1
    assert "[FAIL] dkf_are_range" in capsys.readouterr().out
    # without --check the assertion is not evaluated
    assert main(["bench", cfg_file(checks={"dkf_are_range": [5.0, 6.0]}), "--out-dir", str(out)]) == 0


def test_verify_table(capsys):
    assert main(["verify", "--instances", "2", "--intervals", "100"]) == 0
    out = capsys.readouterr().out
    assert "2/2 instances agree" in out
    assert out.count("PASS") == 2


def test_errors_give_exit_code_2(tmp_path, capsys):
    assert main(["bench", str(tmp_path / "missing.json")]) == 2
    assert "error" in capsys.readouterr().err
    p = tmp_path / "c.json"
    p.write_text(json.dumps({**SMALL, "model": "nope"}))
    assert main(["simulate", str(p)]) == 2


def test_parser_overrides():
    args = build_parser().parse_args(["bench", "toy1", "--n-mc", "3", "--lambda-grid", "1,10", "--workers", "2"])
    assert (args.n_mc, args.lambda_grid, args.workers) == (3, [1.0, 10.0], 2)
    with pytest.raises(SystemExit):
        build_parser().parse_args(["bench", "toy1", "--lambda-grid", "1,-2"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["bench", "toy1", "--lambda-grid", "a,b"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "dkf_ode", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "verify" in res.stdout
