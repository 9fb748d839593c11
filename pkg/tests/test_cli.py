import csv
import json
import math
import os
import statistics
import time

import numpy as np
import pytest

from comboitr import errors
from comboitr.cli import main

TINY_HP = {"epochs": 5, "r": 2, "width_alpha": 8, "width_beta": 8}
FAST_NUISANCE = {"propensity": "fit", "treatment_free": "fit", "hidden": 8, "epochs": 5}


def write_config(path, **cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def sim_dir(tmp_path):
    cfg = write_config(tmp_path / "sim.json", setting=1, n=300, replicates=1, seed=5)
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    return out


@pytest.fixture
def bundle(tmp_path, sim_dir):
    cfg = write_config(tmp_path / "fit.json", hyperparams=TINY_HP, nuisance=FAST_NUISANCE)
    out = tmp_path / "bundle"
    assert main(["fit", str(sim_dir / "setting1_n300_rep000.csv"), "--config", cfg,
                 "--out", str(out)]) == 0
    return out


# ---------------------------------------------------------------- simulate

def test_simulate_single_replicate(tmp_path):
    cfg = write_config(tmp_path / "c.json", setting=1, n=500, replicates=1, seed=1)
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    csvs = sorted(out.glob("setting*.csv"))
    assert [p.name for p in csvs] == ["setting1_n500_rep000.csv"]
    rows = read_csv(csvs[0])
    assert len(rows) == 500
    assert {"combo", "y", "x1", "x10"} <= set(rows[0])
    side = json.loads(csvs[0].with_suffix(".json").read_text())
    assert side["n"] == 500
    assert np.asarray(side["true_propensity"]).shape == (500, 6)
    assert (out / "manifest.json").exists()


def test_simulate_replicates_distinct_and_reproducible(tmp_path):
    cfg = write_config(tmp_path / "c.json", setting=2, n=100, replicates=3, seed=9)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    files = sorted(a.glob("setting*.csv"))
    assert len(files) == 3
    assert len({p.read_bytes() for p in files}) == 3
    assert tree_bytes(a) == tree_bytes(b)


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path / "c.json", setting=1, n=50, seed=1)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", cfg, "--out", str(a)])
    main(["simulate", "--config", cfg, "--out", str(b), "--seed", "2"])
    name = "setting1_n50_rep000.csv"
    assert (a / name).read_bytes() != (b / name).read_bytes()
    assert json.loads((b / "manifest.json").read_text())["seeds"]["master"] == 2


def test_manifest_contents(sim_dir):
    man = json.loads((sim_dir / "manifest.json").read_text())
    assert man["command"] == "simulate"
    assert len(man["config_sha256"]) == 64
    assert "out" not in man["config"]
    assert "setting1_n300_rep000.csv" in man["files"]


# ---------------------------------------------------------------- fit

def test_tiny_fit_end_to_end(tmp_path, sim_dir):
    cfg = write_config(tmp_path / "fit.json", hyperparams=TINY_HP, nuisance=FAST_NUISANCE)
    out = tmp_path / "bundle"
    t0 = time.perf_counter()
    code = main(["fit", str(sim_dir / "setting1_n300_rep000.csv"), "--config", cfg, "--out", str(out)])
    assert code == 0
    assert time.perf_counter() - t0 < 10.0
    for name in ("model.json", "nuisance.json", "hyperparams.json", "metrics.json",
                 "trajectory.csv", "manifest.json"):
        assert (out / name).exists()
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["final_loss"] <= metrics["initial_loss"]
    assert len(read_csv(out / "trajectory.csv")) == TINY_HP["epochs"]


def test_fit_missing_outcome_column(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("x1,x2,combo\n0.1,0.2,0\n0.3,0.4,1\n")
    assert main(["fit", str(p), "--out", str(tmp_path / "b")]) == errors.DataError.exit_code
    assert "'y'" in capsys.readouterr().err


def test_true_propensity_skips_fitting(tmp_path, sim_dir):
    cfg = write_config(tmp_path / "fit.json", hyperparams=TINY_HP, nuisance=FAST_NUISANCE)
    out = tmp_path / "bundle"
    assert main(["fit", str(sim_dir / "setting1_n300_rep000.csv"), "--config", cfg,
                 "--out", str(out), "--true-propensity"]) == 0
    doc = json.loads((out / "nuisance.json").read_text())
    assert doc["propensity"]["kind"] == "true"
    assert "Gamma" not in doc["propensity"]


def test_true_propensity_needs_sidecar(tmp_path, sim_dir):
    src = sim_dir / "setting1_n300_rep000.csv"
    p = tmp_path / "plain.csv"
    p.write_bytes(src.read_bytes())
    code = main(["fit", str(p), "--true-propensity", "--out", str(tmp_path / "b")])
    assert code == errors.ConfigError.exit_code


# ---------------------------------------------------------------- evaluate

def test_oracle_accuracy_is_one(tmp_path, sim_dir):
    out = tmp_path / "ev"
    cfg = write_config(tmp_path / "e.json", n_mc=2000)
    assert main(["evaluate", "oracle", str(sim_dir / "setting1_n300_rep000.csv"),
                 "--config", cfg, "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    row = report["rows"][0]
    assert row["accuracy"] == 1.0
    assert row["true_value"] == row["oracle_value"]
    assert len(read_csv(out / "decisions_setting1_n300_rep000.csv")) == 300


def test_bundle_evaluate(tmp_path, sim_dir, bundle):
    out = tmp_path / "ev"
    cfg = write_config(tmp_path / "e.json", n_mc=2000)
    assert main(["evaluate", str(bundle), str(sim_dir / "setting1_n300_rep000.csv"),
                 "--config", cfg, "--out", str(out)]) == 0
    row = json.loads((out / "report.json").read_text())["rows"][0]
    assert 0.0 <= row["accuracy"] <= 1.0
    assert row["true_value"] <= row["oracle_value"] + 4 * row["true_value_se"]


def test_undefined_empirical_value(tmp_path, sim_dir):
    src = sim_dir / "setting1_n300_rep000.csv"
    first = tmp_path / "first"
    main(["evaluate", "oracle", str(src), "--out", str(first)])
    chosen = [int(r["bitmask"]) for r in read_csv(first / f"decisions_{src.stem}.csv")]
    masks = [0, 1, 2, 3, 4, 7]
    rows = read_csv(src)
    for r, c in zip(rows, chosen):
        r["combo"] = str(masks[(masks.index(c) + 1) % len(masks)])
    miss = tmp_path / "miss.csv"
    with open(miss, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    miss.with_suffix(".json").write_bytes(src.with_suffix(".json").read_bytes())
    out = tmp_path / "ev"
    assert main(["evaluate", "oracle", str(miss), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["rows"][0]["empirical_value"] == "undefined"
    assert report["rows"][0]["n_matched"] == 0
    assert report["summary"]["empirical_value"]["mean"] == "undefined"
    assert "undefined" in (out / "report.txt").read_text()


def test_unknown_combo_is_data_error(tmp_path, sim_dir, bundle):
    src = sim_dir / "setting1_n300_rep000.csv"
    rows = read_csv(src)
    rows[0]["combo"] = "5"
    bad = tmp_path / "bad.csv"
    with open(bad, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    code = main(["evaluate", str(bundle), str(bad), "--out", str(tmp_path / "ev")])
    assert code == errors.DataError.exit_code


# ---------------------------------------------------------------- sweep / report

@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sweep")
    cfg = write_config(tmp / "s.json", setting=1, n=150, replicates=5, seed=3, n_mc=1000,
                       hyperparams=TINY_HP, nuisance=FAST_NUISANCE)
    out = tmp / "out"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    return tmp, cfg, out


def test_sweep_aggregate_matches_recomputation(sweep_dir):
    _, _, out = sweep_dir
    report = json.loads((out / "report.json").read_text())
    rows = report["rows"]
    assert len(rows) == 5
    for metric in ("accuracy", "true_value", "empirical_value"):
        vals = [r[metric] for r in rows]
        agg = report["summary"]["150"][metric]
        assert agg["count"] == 5
        assert agg["mean"] == pytest.approx(statistics.mean(vals), rel=1e-12)
        assert agg["sd"] == pytest.approx(statistics.stdev(vals), rel=1e-10)
    text = (out / "report.txt").read_text()
    acc = [r["accuracy"] for r in rows]
    assert f"{statistics.mean(acc):.4f} ({statistics.stdev(acc):.4f})" in text


def test_sweep_rerun_byte_identical(sweep_dir):
    tmp, cfg, out = sweep_dir
    again = tmp / "again"
    assert main(["sweep", "--config", cfg, "--out", str(again)]) == 0
    assert tree_bytes(out) == tree_bytes(again)


def test_sweep_worker_count_does_not_change_output(sweep_dir, monkeypatch):
    tmp, cfg, out = sweep_dir
    monkeypatch.setenv("COMBOITR_WORKERS", "2")
    par = tmp / "par"
    assert main(["sweep", "--config", cfg, "--out", str(par)]) == 0
    assert tree_bytes(out) == tree_bytes(par)


def test_report_command(sweep_dir):
    _, _, out = sweep_dir
    assert main(["report", str(out)]) == 0
    assert "mean (sd)" in (out / "summary.txt").read_text()


def test_report_on_empty_dir(tmp_path):
    assert main(["report", str(tmp_path)]) == errors.DataError.exit_code


# ---------------------------------------------------------------- allocate

def test_allocate_sweep_from_bundle(tmp_path, sim_dir, bundle):
    data = sim_dir / "setting1_n300_rep000.csv"
    out = tmp_path / "alloc"
    assert main(["allocate", "--bundle", str(bundle), "--data", str(data), "--costs", "1,1,1",
                 "--budget", "20%,50%,80%,100%", "--out", str(out)]) == 0
    doc = json.loads((out / "budget_sweep.json").read_text())
    objs = [r["objective"] for r in doc["rows"]]
    assert objs == sorted(objs)
    for r in doc["rows"]:
        assert r["avg_cost"] <= r["budget_value"] + 1e-12

    # 100% equals the unconstrained argmax value
    with open(out / "delta.csv") as fh:
        delta = np.loadtxt(fh, delimiter=",", skiprows=1)[:, 1:]
    assert objs[-1] == math.fsum(delta.max(axis=1)) / delta.shape[0]

    assign = read_csv(out / "assignment_100%.csv")
    assert len(assign) == 300

    # round trip through the delta CSV
    rt = tmp_path / "rt"
    assert main(["allocate", "--delta", str(out / "delta.csv"), "--costs", "1,1,1",
                 "--budget", "20%,50%,80%,100%", "--out", str(rt)]) == 0
    assert (rt / "budget_sweep.json").read_bytes() == (out / "budget_sweep.json").read_bytes()
    for name in ("assignment_20%.csv", "assignment_100%.csv"):
        assert (rt / name).read_bytes() == (out / name).read_bytes()


def test_allocate_absolute_budgets_and_config(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("subject,0,1,2,3\n0,0.0,1.0,2.0,2.5\n1,0.0,0.5,0.25,3.0\n")
    cfg = write_config(tmp_path / "c.json", costs=[1, 2], budgets=[0, 1.5, 3])
    out = tmp_path / "o"
    assert main(["allocate", "--delta", str(p), "--config", cfg, "--out", str(out)]) == 0
    rows = json.loads((out / "budget_sweep.json").read_text())["rows"]
    # total spend 3 at B = 1.5: subject 1 takes combo 3 alone
    assert [r["objective"] for r in rows] == [0.0, 1.5, 2.75]


def test_allocate_infeasible_budget(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("subject,1,2\n0,1.0,2.0\n1,0.5,0.25\n")
    code = main(["allocate", "--delta", str(p), "--costs", "1,1", "--budget", "0.5",
                 "--out", str(tmp_path / "o")])
    assert code == errors.InfeasibleError.exit_code


def test_allocate_cost_length_mismatch(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("subject,0,1,2,3\n0,0.0,1.0,0.5,2.0\n")
    code = main(["allocate", "--delta", str(p), "--costs", "1", "--budget", "1",
                 "--out", str(tmp_path / "o")])
    assert code == errors.ConfigError.exit_code


# ---------------------------------------------------------------- errors

def test_exit_codes_are_distinct():
    codes = [errors.ConfigError.exit_code, errors.DataError.exit_code,
             errors.OptimizationError.exit_code, errors.InfeasibleError.exit_code,
             errors.OutputError.exit_code]
    assert len(set(codes)) == len(codes)
    assert 0 not in codes


def test_unknown_config_key(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", setting=1, n=10, colour="blue")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err


def test_bad_config_value_names_path(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", setting=1, nuisance={"propensity": "guess"})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "nuisance" in capsys.readouterr().err


def test_unknown_hyperparameter(tmp_path):
    cfg = write_config(tmp_path / "c.json", setting=1, hyperparams={"depth": 3})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_divergent_training_is_optimization_error(tmp_path, sim_dir):
    cfg = write_config(tmp_path / "c.json", hyperparams=dict(TINY_HP, lr=1e200),
                       nuisance={"propensity": "none", "treatment_free": "zero"})
    code = main(["fit", str(sim_dir / "setting1_n300_rep000.csv"), "--config", cfg,
                 "--out", str(tmp_path / "b")])
    assert code == errors.OptimizationError.exit_code


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_output_dir(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    cfg = write_config(tmp_path / "c.json", setting=1, n=10)
    try:
        code = main(["simulate", "--config", cfg, "--out", str(locked / "sub")])
    finally:
        locked.chmod(0o700)
    assert code == errors.OutputError.exit_code


def test_output_path_is_a_file(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_config(tmp_path / "c.json", setting=1, n=10)
    code = main(["simulate", "--config", cfg, "--out", str(blocker / "sub")])
    assert code == errors.OutputError.exit_code
