import csv
import io
import json
import math
import subprocess
import sys

import pytest

from qcd import __version__
from qcd.cli import COLUMNS, main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_bounds_example(capsys):
    code, out, _ = run(["bounds", "--dist", "gaussian", "--mu", "1.0", "--horizon", "10000",
                        "--delta-f", "0.05", "--delta-d", "0.05", "--r", "2.0"], capsys)
    assert code == 0
    assert out.splitlines()[0] == ",".join(COLUMNS["bounds"])
    (row,) = rows(out)
    assert float(row["theta_star"]) == pytest.approx(0.2575, abs=1e-4)
    assert float(row["upper_bound"]) == pytest.approx(90.36, abs=1e-2)
    assert float(row["lower_bound"]) == pytest.approx(12.10, abs=5e-3)
    assert row["upper_bound_samples"] == "91"


def test_oracle_example(capsys):
    code, out, err = run(["oracle", "--dist", "bernoulli", "--p0", "0.2", "--p1", "0.8",
                          "--policy", "tvt", "--delta-f", "0.05", "--r", "2",
                          "--horizon", "12", "--nu", "inf"], capsys)
    assert code == 0
    (row,) = rows(out)
    assert row["quantity"] == "false_alarm" and row["verdict"] == "pass"
    assert float(row["value"]) < 0.05
    assert "pass" in err


def test_oracle_certification_failure_exit_code(capsys):
    code, out, _ = run(["oracle", "--dist", "bernoulli", "--p0", "0.2", "--p1", "0.8",
                        "--policy", "fixed", "--b", "5", "--horizon", "100,10000"], capsys)
    assert code == 3
    assert [r["verdict"] for r in rows(out)] == ["fail", "fail"]


def test_oracle_latency_and_miss(capsys):
    code, out, _ = run(["oracle", "--dist", "bernoulli", "--p0", "0.2", "--p1", "0.8",
                        "--horizon", "500", "--nu", "100", "--d", "30", "--latency"], capsys)
    assert code == 0
    miss, lat = rows(out)
    assert miss["quantity"] == "miss_probability" and 0 < float(miss["value"]) < 1
    assert lat["quantity"] == "exact_latency" and lat["value"] == "30"
    assert int(lat["value"]) <= int(lat["target"])


def test_oracle_rejects_gaussian(capsys):
    code, _, err = run(["oracle", "--dist", "gaussian", "--mu", "1", "--horizon", "12"], capsys)
    assert code == 2
    assert "discrete" in err


def test_simulate_byte_identical(tmp_path, capsys):
    args = ["simulate", "--dist", "gaussian", "--mu", "1", "--horizon", "400",
            "--nu", "inf,50", "--d", "20", "--trials", "1000", "--seed", "42"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--output", str(a)]) == 0
    assert main(args + ["--output", str(b), "--workers", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    manifest = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    assert {"config", "resolved_seed", "tool_version", "started_at"} <= manifest.keys()
    assert manifest["resolved_seed"] == 42
    assert manifest["tool_version"] == __version__
    fa, miss = rows(a.read_text())
    assert fa["verdict"] == "pass" and fa["seed"] == "42"
    assert miss["quantity"] == "miss_probability" and miss["d"] == "20"


def test_manifest_reproduces_unseeded_run(tmp_path):
    out = tmp_path / "r.csv"
    args = ["simulate", "--dist", "bernoulli", "--p0", "0.2", "--p1", "0.8",
            "--horizon", "300", "--trials", "500"]
    assert main(args + ["--output", str(out)]) == 0
    manifest = json.loads((tmp_path / "r.csv.manifest.json").read_text())
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({k: v for k, v in manifest["config"].items()
                                  if k != "command" and v is not None}))
    again = tmp_path / "again.csv"
    assert main(["simulate", "--config", str(config), "--output", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()


def test_simulate_latency_grid(capsys):
    code, out, _ = run(["simulate", "--dist", "bernoulli", "--p0", "0.2", "--p1", "0.8",
                        "--horizon", "200", "--nu", "grid", "--trials", "2000",
                        "--seed", "1"], capsys)
    assert code == 0
    table = rows(out)
    assert table[0]["quantity"] == "empirical_latency"
    d_hat = int(table[0]["value"])
    assert int(table[0]["ci_low"]) <= d_hat <= int(table[0]["ci_high"])
    assert all(r["quantity"] == "miss_probability" and r["d"] == str(d_hat) for r in table[1:])


def test_sweep_gaussian_upper_bounds_increase(capsys):
    code, out, _ = run(["sweep", "--dist", "gaussian", "--mu", "1",
                        "--horizon", "100,1000,10000", "--quantities", "upper_bound,lower_bound"],
                       capsys)
    assert code == 0
    assert out.splitlines()[0] == ",".join(COLUMNS["sweep"])
    ub = [float(r["value"]) for r in rows(out) if r["quantity"] == "upper_bound"]
    assert len(ub) == 3 and ub[0] < ub[1] < ub[2]
    assert all(r["ci_low"] == "" and r["ci_high"] == "" for r in rows(out))


def test_sweep_discrete_with_exact(capsys):
    code, out, _ = run(["sweep", "--dist", "bernoulli", "--p0", "0.2", "--p1", "0.8",
                        "--horizon", "200,500", "--trials", "2000", "--seed", "3",
                        "--exact"], capsys)
    assert code == 0
    table = rows(out)
    assert {r["quantity"] for r in table} == {"empirical_latency", "upper_bound",
                                              "lower_bound", "exact_latency"}
    for T in ("200", "500"):
        by_q = {r["quantity"]: r for r in table if r["T"] == T}
        assert int(by_q["exact_latency"]["value"]) <= math.ceil(float(by_q["upper_bound"]["value"]))


@pytest.mark.parametrize("argv", [
    ["sweep", "--dist", "gaussian", "--mu", "1", "--horizon", "100"],
    ["sweep", "--dist", "gaussian", "--mu", "1", "--horizon", ""],
    ["sweep", "--dist", "gaussian", "--mu", "1", "--horizon", "100,200", "--quantities", "x"],
    ["sweep", "--dist", "gaussian", "--mu", "1", "--horizon", "100,200", "--exact"],
    ["bounds", "--dist", "gaussian", "--mu", "1", "--horizon", "100", "--bogus"],
    ["bounds", "--dist", "gaussian", "--mu", "1", "--horizon", "0"],
    ["bounds", "--dist", "gaussian", "--mu", "1", "--horizon", "100", "--r", "1"],
    ["bounds", "--dist", "gaussian", "--mu", "1", "--horizon", "100", "--delta-d", "1.2"],
    ["bounds", "--dist", "gaussian", "--mu", "1", "--horizon", "100",
     "--delta-f", "0.6", "--delta-d", "0.5"],
    ["bounds", "--dist", "gaussian", "--horizon", "100"],
    ["bounds", "--dist", "bernoulli", "--p0", "0.5", "--p1", "0.5", "--horizon", "10"],
    ["simulate", "--dist", "gaussian", "--mu", "1", "--horizon", "100", "--nu", "5"],
    ["simulate", "--dist", "gaussian", "--mu", "1", "--horizon", "100", "--trials", "10"],
    ["simulate", "--dist", "gaussian", "--mu", "1", "--horizon", "100", "--policy", "fixed"],
    ["frobnicate"],
    [],
])
def test_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2
    assert err.startswith("qcd: error:")


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("dist: gaussian\nmu: 2.0\nhorizon: [100, 1000]\ndelta-f: 0.01\n")
    code, out, _ = run(["bounds", "--config", str(cfg), "--mu", "1"], capsys)
    assert code == 0
    table = rows(out)
    assert [r["T"] for r in table] == ["100", "1000"]
    assert table[0]["delta_f"] == "0.01"
    code, ref, _ = run(["bounds", "--dist", "gaussian", "--mu", "1", "--horizon", "100,1000",
                        "--delta-f", "0.01"], capsys)
    assert ref == out


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("dist: gaussian\nmuu: 2.0\n")
    code, _, err = run(["bounds", "--config", str(cfg)], capsys)
    assert code == 2 and "muu" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qcd", "bounds", "--dist", "bernoulli",
                           "--p0", "0.2", "--p1", "0.8", "--horizon", "10000"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    (row,) = rows(proc.stdout)
    assert float(row["lower_bound"]) == pytest.approx(10.27, abs=5e-3)
