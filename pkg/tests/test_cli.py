import json
import subprocess
import sys

import numpy as np
import pytest

from screenlab import cli
from screenlab.design import DesignReport
from screenlab.evalkit import EvalReport, PRCurve
from screenlab.objective import History
from screenlab.predictor import init_predictor, load_predictor, save_predictor
from screenlab.screen import load_dataset
from screenlab.verify import load_rows_csv

TINY = {
    "population": {"N": 30000},
    "screen": {"n": 200},
    "train": {"epochs": 2, "M": 128, "batch_size": 64},
    "eval": {"heldout_N": 20000, "M": 5000, "truth_N": 20000},
    "seeds": [0, 1],
    "verify": {"n_grid": [50, 500], "seeds": [0, 1]},
}


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_fixture_train_smoke(tmp_path):
    fixture = cli._packaged("fixture_config.json")
    assert run("train", "--config", fixture, "--objective", "leavs", "--q", "1.0", "--seed", 0, "--out", tmp_path, "--quiet") == 0
    hist = History.from_csv(tmp_path / "history_seed0.csv")
    assert np.isfinite(hist.loss_xy[-1]) and np.isfinite(hist.loss_y[-1])
    assert load_predictor(tmp_path / "checkpoint_seed0.json").dim > 0


def test_design_hit_rate(tmp_path):
    assert run("design", "--hit-rate", 0.01, "--out", tmp_path, "--quiet") == 0
    d = json.loads((tmp_path / "design.json").read_text())
    assert d["recommended_q"] == 1.0 and not d["fallback"]
    assert d["sample_size_multiplier"] == pytest.approx(1 / 0.03)


def test_design_family_round_trip(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"design": {"family": {"eta": 0.03, "level0": 0.0}, "M": 50000}}))
    assert run("design", "--config", cfg, "--out", tmp_path, "--quiet") == 0
    rep = DesignReport.load(tmp_path / "design.json")
    assert rep.recommended_q == 1.0 and len(rep.q_grid) == 22
    assert rep.det_Hq.shape == rep.det_Hq_se.shape == rep.q_grid.shape


def test_pipeline_outputs_reparse(tiny, tmp_path):
    out = tmp_path / "o"
    assert run("simulate", "--config", tiny, "--seed", 3, "--q", 0.5, "--out", out, "--quiet") == 0
    ds = load_dataset(out / "dataset_seed3.jsonl")
    assert ds.N == 30000 and len(ds) == 200 and ds.measured_counts[0] == 100
    assert run("train", "--config", tiny, "--seed", 3, "--out", out, "--quiet") == 0
    assert run("evaluate", "--config", tiny, "--seed", 3, "--out", out, "--quiet") == 0
    rep = EvalReport.load(out / "report_seed3.json")
    curve = PRCurve.from_csv(out / "pr_curve_seed3.csv")
    assert np.array_equal(curve.thresholds, rep.curve_est.thresholds)
    assert 0 <= rep.accuracy_est <= 1 and rep.accuracy_true is not None


def test_sweep_row_count_with_default_grid(tiny, tmp_path):
    assert run("sweep-q", "--config", tiny, "--out", tmp_path, "--quiet") == 0
    rows = cli.read_sweep_csv(tmp_path / "sweep_q.csv")
    assert len(rows) == 22 * 2 * 2
    assert list(rows[0]) == cli.SWEEP_COLUMNS
    keys = [(r["q"], r["objective"], r["seed"]) for r in rows]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)


def test_verify_theory_tables(tiny, tmp_path):
    assert run("verify-theory", "--config", tiny, "--out", tmp_path, "--quiet") == 0
    mle = load_rows_csv(tmp_path / "mle_path.csv")
    assert len(mle) == 3 * 3 * 2 * 2
    assert len(load_rows_csv(tmp_path / "bvm.csv")) == 2 * 2
    curve = load_rows_csv(tmp_path / "design_curve.csv")
    assert float(curve[-1]["q"]) == 1.0 and float(curve[-1]["entropy_gain_q1_over_q"]) == 0.0


def test_config_errors_exit_2(tmp_path):
    assert run("design", "--config", tmp_path / "missing.json", "--hit-rate", 0.1, "--out", tmp_path) == 2
    assert run("sweep-q", "--q", 2, "--out", tmp_path) == 2
    assert run("design", "--out", tmp_path) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("train", "--config", bad, "--out", tmp_path) == 2


def test_runtime_error_exit_3(tiny, tmp_path):
    # A well-formed checkpoint for sequences of the wrong length.
    save_predictor(init_predictor({"kind": "linear"}, "bernoulli", 3, "AC", 0), tmp_path / "checkpoint_seed0.json")
    assert run("evaluate", "--config", tiny, "--seed", 0, "--out", tmp_path, "--quiet") == 3


@pytest.mark.parametrize(
    "argv,flag",
    [(["sweep-q", "--q", "2"], "--q"), (["design", "--hit-rate", "abc"], "--hit-rate"), (["train", "--objective", "foo"], "--objective")],
)
def test_usage_errors_name_the_flag(argv, flag, tmp_path):
    res = subprocess.run([sys.executable, "-m", "screenlab.cli", *argv, "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 2 and flag in res.stderr


def test_unknown_command():
    res = subprocess.run([sys.executable, "-m", "screenlab.cli", "plot"], capture_output=True, text=True)
    assert res.returncode == 2
