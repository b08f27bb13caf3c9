import json
import math
import subprocess
import sys

import numpy as np
import pytest

from ltw2 import cli, config
from ltw2.dynamics import ConfigError, read_matrix, read_trajectories
from ltw2.losses import build_neighborhoods, local_w2_loss, mse_loss

# small overrides so full command runs take seconds
TINY = ["data.n_trajectories=12", "data.grid.n_points=6", "train.max_epochs=3",
        "train.checkpoint_every=2", "eval.m=200", "eval.cap=100"]


def _tiny(preset="example1", extra=()):
    return cli.resolve_config(preset, sets=list(TINY) + list(extra))


@pytest.mark.parametrize("name,row", [
    ("example1", dict(lr=0.001, wd=0.01, epochs=500, n=200, widths=[40], dt=0.1, npts=81,
                      bias=2.0, wstd=0.01, delta=0.4)),
    ("example3", dict(lr=0.0005, wd=0.02, epochs=2000, n=200, widths=[10, 10, 10], dt=0.05,
                      npts=41, bias={"normal": 0.03}, wstd=0.03, delta=math.inf)),
    ("example4", dict(lr=0.001, wd=0.02, epochs=400, n=300, widths=[50, 50], dt=0.1, npts=21,
                      bias=0.01, wstd=0.01, delta=0.1)),
])
def test_presets_match_training_table(name, row):
    doc = config.load_preset(name)
    tc = config.build_train_config(doc)
    assert tc.learning_rate == row["lr"] and tc.weight_decay == row["wd"]
    assert tc.max_epochs == row["epochs"] and tc.n_trajectories == row["n"]
    assert list(tc.snn.hidden_widths) == row["widths"]
    assert set(tc.snn.modes) == {"relu"}
    assert tc.grid.dt == row["dt"] and tc.grid.n_points == row["npts"]
    assert tc.snn.init_bias == row["bias"] and tc.snn.init_weight_mean_std == row["wstd"]
    assert tc.delta == row["delta"] and tc.loss == "local-w2"


def test_example4_truth_case():
    truth = config.build_truth(config.load_preset("example4"), 0)
    assert (truth.sigma0, truth.beta0, truth.sigma1, truth.sigma2) == (0.3, 0.35, 0.15, 0.1)


def test_strict_keys_and_overrides():
    doc = config.load_preset("example1")
    with pytest.raises(ConfigError):
        config.normalize(dict(doc, trian={}))
    with pytest.raises(ConfigError):
        config.set_path(doc, "train.learnig_rate", 0.1)
    with pytest.raises(ConfigError):
        config.set_path(doc, "train.delta.x", 0.1)
    d2 = config.set_path(doc, "data.truth.c_low", 2.5)
    assert d2["data"]["truth"]["c_low"] == 2.5 and doc["data"]["truth"]["c_low"] == 2.0
    assert config.parse_vary("train.delta=0.05,0.1") == ("train.delta", [0.05, 0.1])
    with pytest.raises(ConfigError):
        config.parse_vary("train.delta")
    with pytest.raises(ConfigError):
        config.loads("{not json")
    with pytest.raises(ConfigError):
        config.loads('{"model": {"name": "lotka_volterra"}}')
    with pytest.raises(ConfigError):
        config.build_train_config(config.set_path(doc, "train.delta", -1))
    assert config.loads(config.dumps(doc)) == doc


def test_simulate_writes_expected_files(tmp_path):
    doc = cli.resolve_config("example1")
    batch = cli.run_simulate(doc, tmp_path / "d")
    back = read_trajectories(tmp_path / "d" / "trajectories.csv")
    assert back.states.shape == (200, 81, 2)
    np.testing.assert_array_equal(back.states, batch.states)
    assert read_matrix(tmp_path / "d" / "params_truth.csv").shape == (200, 1)
    rows = (tmp_path / "d" / "trajectories.csv").read_text().splitlines()
    assert len(rows) == 1 + 200 * 81


def test_seed_override_changes_and_reproduces_data(tmp_path):
    for k, seed in enumerate((1, 1, 2)):
        assert cli.main(["simulate", "--config", "example4", "--seed", str(seed), "--set",
                         "data.n_trajectories=10", "--out", str(tmp_path / str(k))]) == 0
    files = [(tmp_path / str(k) / "trajectories.csv").read_bytes() for k in range(3)]
    assert files[0] == files[1] and files[0] != files[2]


def test_exit_codes(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert cli.main(["simulate", "--config", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err
    assert cli.main(["simulate", "--config", "example1", "--set", "train.bogus=1",
                     "--out", str(tmp_path)]) == 2
    assert cli.main(["train", "--config", "example1", "--data", str(tmp_path / "none"),
                     "--out", str(tmp_path / "t")]) == 2
    assert cli.main(["sweep", "--config", "example1", "--vary", "train.nope=1,2",
                     "--out", str(tmp_path / "s")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert cli.main(["evaluate", "--config", "example1", "--snn", str(bad),
                     "--out", str(tmp_path / "e")]) == 4


def test_training_abort_exits_3(tmp_path):
    sets = TINY + ["train.learning_rate=1e6", "train.max_epochs=30"]
    args = ["--config", "example1"] + sum([["--set", s] for s in sets], [])
    assert cli.main(["simulate", *args, "--out", str(tmp_path / "d")]) == 0
    # a huge step size blows the populations up at epoch 2
    with np.errstate(all="ignore"):
        code = cli.main(["train", *args, "--data", str(tmp_path / "d"),
                         "--out", str(tmp_path / "t")])
    assert code == 3
    log = (tmp_path / "t" / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,loss,grad_norm,wall_ms" and len(log) == 2


def test_train_evaluate_end_to_end_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        root = tmp_path / str(k)
        doc = _tiny()
        cli.run_simulate(doc, root / "d")
        cli.run_train(doc, root / "d", root / "t")
        cli.run_evaluate(doc, root / "t" / "snn_final.json", root / "e", data_dir=root / "d")
        outs.append(root)
    names = ["d/trajectories.csv", "d/params_truth.csv", "t/train_log.csv", "t/snn_final.json",
             "t/checkpoint_00002.json", "t/checkpoint_00003.json", "e/metrics.json",
             "e/params_recon.csv", "e/ensemble.csv"]
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    metrics = json.loads((outs[0] / "e" / "metrics.json").read_text())
    assert metrics["relative_error"] >= 0 and len(metrics["mean_abs_err"]) == 1
    assert read_matrix(outs[0] / "e" / "params_recon.csv").shape == (200, 1)
    log = (outs[0] / "t" / "train_log.csv").read_text().splitlines()
    assert len(log) == 4


def test_evaluate_example3_reports_seven_parameters(tmp_path):
    doc = _tiny("example3", ["train.max_epochs=1"])
    cli.run_simulate(doc, tmp_path / "d")
    cli.run_train(doc, tmp_path / "d", tmp_path / "t")
    cli.run_evaluate(doc, tmp_path / "t" / "snn_final.json", tmp_path / "new" / "e")
    metrics = json.loads((tmp_path / "new" / "e" / "metrics.json").read_text())
    assert len(metrics["mean_abs_err"]) == 7 and len(metrics["var_abs_err"]) == 7


def test_evaluate_rejects_mismatched_network(tmp_path):
    doc = _tiny()
    cli.run_simulate(doc, tmp_path / "d")
    cli.run_train(doc, tmp_path / "d", tmp_path / "t")
    other = _tiny("example4")
    with pytest.raises(cli.EvalFailure):
        cli.run_evaluate(other, tmp_path / "t" / "snn_final.json", tmp_path / "e")


def test_mse_equals_local_w2_on_single_trajectory(tmp_path):
    doc = _tiny(extra=["data.n_trajectories=1", "train.max_epochs=1"])
    cli.run_simulate(doc, tmp_path / "d")
    logs = {}
    for loss in ("mse", "local-w2"):
        cli.run_train(doc, tmp_path / "d", tmp_path / loss, loss=loss)
        logs[loss] = (tmp_path / loss / "train_log.csv").read_text().splitlines()[1].split(",")
    assert abs(float(logs["mse"][1]) - float(logs["local-w2"][1])) < 1e-8


def test_sweep_rows_and_single_cell_equivalence(tmp_path):
    doc = _tiny()
    res = cli.run_sweep(doc, ["train.delta=0.2,0.4", "train.learning_rate=0.001"],
                        tmp_path / "s")
    rows = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 and all(r["status"] == "ok" for r in res)
    assert rows[0].startswith("train.delta,train.learning_rate,status,relative_error")
    # the cell at delta 0.4 matches a plain simulate/train/evaluate
    cli.run_simulate(doc, tmp_path / "p" / "d")
    cli.run_train(doc, tmp_path / "p" / "d", tmp_path / "p" / "t")
    rep = cli.run_evaluate(doc, tmp_path / "p" / "t" / "snn_final.json", tmp_path / "p" / "e",
                           data_dir=tmp_path / "p" / "d")
    assert res[1]["report"]["relative_error"] == rep.relative_error


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("LTW2_MAX_WORKERS", "2")
    assert cli.max_workers(8) == 2 and cli.max_workers() == 1
    monkeypatch.setenv("LTW2_MAX_WORKERS", "x")
    with pytest.raises(ConfigError):
        cli.max_workers(2)


def test_help_documents_every_flag():
    out = subprocess.run([sys.executable, "-m", "ltw2.cli", "train", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    for flag in ("--config", "--seed", "--set", "--out", "--loss", "--data", "--wall-time"):
        assert flag in out.stdout
    top = subprocess.run([sys.executable, "-m", "ltw2.cli", "--help"], capture_output=True,
                         text=True)
    assert "Exit codes" in top.stdout


def test_loss_collapse_inside_cli_data(tmp_path):
    # neighbourhoods built from data written by the CLI behave as in memory
    doc = _tiny()
    batch = cli.run_simulate(doc, tmp_path / "d")
    obs = read_trajectories(tmp_path / "d" / "trajectories.csv")
    nb = build_neighborhoods(obs.initial_states, 0.0)
    assert abs(local_w2_loss(obs, batch, nb).value - mse_loss(obs, batch).value) < 1e-15
