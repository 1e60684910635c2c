import json

import numpy as np
import pytest

from compest.cli import main
from compest.harness import load_result


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_zones(capsys):
    code, out = run(capsys, "zones", "--gamma", 1, "--beta", 2, "--eps", 0.01)
    data = json.loads(out.out)
    assert code == 0
    assert data["zone"] == "P1" and data["branch"] == 1
    assert data["exponent"] == pytest.approx(4 / 7)
    assert data["phi"] == pytest.approx(0.1113375, rel=1e-6)
    code, out = run(capsys, "zones", "--gamma", 3, "--beta", 1)
    assert code == 0 and json.loads(out.out)["zone"] is None


def test_weight_build_and_check(capsys, tmp_path):
    path = tmp_path / "w.json"
    code, _ = run(capsys, "weight", "build", "--gamma", 1.9, "--beta", 2.0, "--lambda", 0.01, "--out", path)
    assert code == 0
    spec = json.loads(path.read_text())
    assert spec["l2sq"] == pytest.approx(544.7379, rel=1e-6)
    code, out = run(capsys, "weight", "check", "--spec", path)
    assert code == 0 and "FAIL" not in out.out and "PASS" in out.out
    code, out = run(capsys, "weight", "check", "--gamma", 1.3, "--beta", 2.0, "--lambda", 1e-11)
    assert code == 0


def test_domain_errors_exit_with_code_two(capsys):
    code, out = run(capsys, "weight", "build", "--gamma", 1, "--beta", 2, "--lambda", 2.0)
    assert code == 2 and out.err.startswith("compest: error:")


def test_simulate_then_estimate_from_file(capsys, tmp_path):
    field = tmp_path / "f.bin"
    code, _ = run(capsys, "simulate", "--preset", "quad-ridge", "--eps", 0.1, "--cells", 160, "--a", 2.5, "--seed", 1, "--out", field)
    assert code == 0 and field.stat().st_size == 8 * 160 * 160
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"field = {field}\ngamma = 1\nbeta = 2\nnet_size = 8\nout = {tmp_path / 'e.json'}\ncsv = {tmp_path / 'e.csv'}\n")
    code, out = run(capsys, "estimate", "--config", cfg)
    assert code == 0
    assert json.loads(out.out)["points"] == 256
    result = json.loads((tmp_path / "e.json").read_text())
    assert len(result["values"]) == 256
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 257


def test_estimate_synthesized_reports_error(capsys, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(
        f"gamma = 1\nbeta = 2\neps = 0.1\nnet_size = 8\ncell_cap = 128\nseed = 4\nout = {tmp_path / 'e.json'}\ncsv = {tmp_path / 'e.csv'}\n"
    )
    code, out = run(capsys, "estimate", "--config", cfg)
    assert code == 0
    summary = json.loads(out.out)
    assert 0 < summary["sup_error"] < 1
    cfg.write_text("gamma = 1\nbeta = 2\neps = 0.1\nunknown = 3\n")
    code, out = run(capsys, "estimate", "--config", cfg)
    assert code == 2 and "unknown config keys" in out.err


def test_lowerbound(capsys, tmp_path):
    path = tmp_path / "lb.json"
    code, _ = run(capsys, "lowerbound", "--gamma", 1, "--beta", 2, "--eps", 0.01, "--L0", 0.25, "--out", path)
    assert code == 0
    data = json.loads(path.read_text())
    assert data["family"]["m"] == 3
    assert data["separation_over_h_gamma"] == pytest.approx(0.12395, rel=1e-4)
    assert max(r["value"] for r in data["kl"]) <= data["kl_bound"]
    assert data["certificate"]["G"][0]["pass"]


def test_rate_sweep(capsys, tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("gamma = 1\nbeta = 2\neps = 0.2, 0.1\nreplicates = 2\nnet_size = 8\ncell_cap = 96\nbaseline = true\n")
    out_dir = tmp_path / "sweep"
    code, out = run(capsys, "rate-sweep", "--config", cfg, "--out", out_dir)
    assert code == 0
    assert np.isfinite(json.loads(out.out)["slope"])
    res = load_result(out_dir / "result.json")
    assert len(res.errors) == 2 and all(len(e) == 2 for e in res.errors)
    assert (out_dir / "result.csv").exists() and (out_dir / "rate.dat").exists()
