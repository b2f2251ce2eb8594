import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from objgps.cli import emit_results, main
from objgps.gps import EvaluationResult


@pytest.fixture
def linear_setup(tmp_path):
    assert main(["gen-demos", "--env", "linear", "--out", str(tmp_path)]) == 0
    cfg = {"env": {"kind": "linear"}, "demos": {"path": "demos.csv", "sigma": 0.05},
           "controllers": {"init_ids": ["origin", "offset"]}, "iterations": 2, "samples": 5,
           "ridge": 1e-2, "policy": {"hidden": [4, 4], "epochs": 5}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    return tmp_path


def train(setup, out, *extra):
    return main(["train", "--config", str(setup / "cfg.json"), "--out", str(out), *extra])


def test_train_writes_checkpoint(linear_setup):
    out = linear_setup / "run"
    assert train(linear_setup, out) == 0
    for name in ("config.json", "demos.csv", "reports.jsonl", "timings.jsonl", "weights.npz",
                 "controllers.npz", "policy.json"):
        assert (out / name).is_file(), name
    assert len((out / "reports.jsonl").read_text().splitlines()) == 2


def test_resolved_config_reproduces_run(linear_setup):
    a, b = linear_setup / "a", linear_setup / "b"
    assert train(linear_setup, a) == 0
    assert main(["train", "--config", str(a / "config.json"), "--out", str(b)]) == 0
    assert (a / "reports.jsonl").read_bytes() == (b / "reports.jsonl").read_bytes()
    assert (a / "policy.json").read_bytes() == (b / "policy.json").read_bytes()


def test_seed_and_override_flags(linear_setup):
    out = linear_setup / "run"
    assert train(linear_setup, out, "--seed", "9", "--set", "trust_region.epsilon=0.25") == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["seed"] == 9 and cfg["trust_region"]["epsilon"] == 0.25


def test_usage_errors_exit_one(linear_setup, capsys):
    assert main(["train", "--config", str(linear_setup / "cfg.json"), "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["train", "--config", str(linear_setup / "missing.json"), "--out", str(linear_setup)]) == 1
    assert main(["train", "--config", str(linear_setup / "cfg.json"), "--out", str(linear_setup / "r"),
                 "--set", "no.such=1"]) == 1
    assert main([]) == 1


def test_runtime_errors_exit_two(linear_setup):
    bad = json.loads((linear_setup / "cfg.json").read_text())
    bad["controllers"]["init_ids"] = ["nowhere"]
    (linear_setup / "bad.json").write_text(json.dumps(bad))
    assert main(["train", "--config", str(linear_setup / "bad.json"), "--out", str(linear_setup / "r")]) == 2
    assert main(["inspect-weights", "--checkpoint", str(linear_setup), "--iteration", "1",
                 "--out", str(linear_setup / "w.csv")]) == 2


def test_evaluate_single_trial(linear_setup):
    ckpt, ev = linear_setup / "run", linear_setup / "eval"
    assert train(linear_setup, ckpt) == 0
    assert main(["evaluate", "--checkpoint", str(ckpt), "--inits", "origin,offset",
                 "--trials", "1", "--out", str(ev)]) == 0
    with open(ev / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert [r["init_id"] for r in rows] == ["origin", "offset"]
    assert main(["evaluate", "--checkpoint", str(ckpt), "--inits", "origin", "--trials", "0",
                 "--out", str(ev)]) == 1
    assert main(["evaluate", "--checkpoint", str(ckpt), "--inits", "nowhere", "--trials", "1",
                 "--out", str(ev)]) == 2


def test_inspect_weights(linear_setup):
    ckpt = linear_setup / "run"
    assert train(linear_setup, ckpt) == 0
    out = linear_setup / "w.csv"
    assert main(["inspect-weights", "--checkpoint", str(ckpt), "--iteration", "2", "--out", str(out)]) == 0
    with open(out) as f:
        rows = list(csv.DictReader(f))
    T = 50
    assert len(rows) == 2 * T
    for j in ("origin", "offset"):
        assert sum(float(r["weight"]) for r in rows if r["controller"] == j and r["t"] == "1") == pytest.approx(0.5)
    assert main(["inspect-weights", "--checkpoint", str(ckpt), "--iteration", "3", "--out", str(out)]) == 2


def fake_result(rng, inits=("pos1", "pos2", "pos3", "pos12"), trials=10):
    err = {i: list(rng.uniform(0, 1, trials)) for i in inits}
    cost = {i: list(rng.uniform(0, 5, trials)) for i in inits}
    return EvaluationResult(list(inits), {i: 0 for i in inits}, err, cost)


def test_emit_results_counts_and_stability(tmp_path, rng):
    res = fake_result(rng)
    emit_results(res, tmp_path / "a")
    emit_results(res, tmp_path / "b")
    metrics = (tmp_path / "a" / "metrics.csv").read_text().splitlines()
    summary = (tmp_path / "a" / "summary.csv").read_text().splitlines()
    assert len(metrics) - 1 + len(summary) - 1 == 44
    for name in ("metrics.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_summary_matches_raw_values(tmp_path, rng):
    emit_results(fake_result(rng), tmp_path)
    with open(tmp_path / "metrics.csv") as f:
        raw = list(csv.DictReader(f))
    with open(tmp_path / "summary.csv") as f:
        summary = {r["init_id"]: r for r in csv.DictReader(f)}
    for init_id, s in summary.items():
        vals = np.array([float(r["final_error"]) for r in raw if r["init_id"] == init_id])
        assert float(s["mean"]) == pytest.approx(vals.mean(), rel=1e-12)
        assert float(s["stddev"]) == pytest.approx(np.sqrt(np.mean((vals - vals.mean()) ** 2)), rel=1e-12)


def test_emit_rejects_non_finite(tmp_path, rng):
    res = fake_result(rng)
    res.final_error["pos1"][0] = float("nan")
    with pytest.raises(ValueError):
        emit_results(res, tmp_path)
    assert not (tmp_path / "metrics.csv").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "objgps.cli", "gen-demos", "--env", "valve_turn",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "demos.csv").read_text().startswith("demo_id")
