import json

import numpy as np
import pytest

from cdsgd import cli
from cdsgd.topology import InteractionMatrix

FAST = ["--objective", "logistic:reg=0.01", "--data", "blobs:n=400,d=5,classes=2,sep=4", "--batch", "16",
        "--epochs", "2"]


def test_run_writes_outputs(tmp_path, capsys):
    assert cli.main(["run", *FAST, "--out", str(tmp_path), "--plot"]) == cli.EXIT_OK
    names = {p.name for p in tmp_path.iterdir()}
    assert {"metrics.csv", "epochs.csv", "bounds.json", "consensus.svg", "lyapunov.svg", "loss_accuracy.svg"} <= names
    assert json.loads(capsys.readouterr().out)["steps"] == 6


def test_plot_subcommand(tmp_path, capsys):
    cli.main(["run", *FAST, "--out", str(tmp_path / "r")])
    assert cli.main(["plot", str(tmp_path / "r"), "--out", str(tmp_path / "figs")]) == 0
    assert len(list((tmp_path / "figs").glob("*.svg"))) == 3


def test_config_file_with_flag_override(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"agents": 3, "epochs": 5, "batch": 16,
                                                 "data": "blobs:n=400,d=5,classes=2,sep=4"}))
    assert cli.main(["run", "--config", str(tmp_path / "c.json"), "--epochs", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["steps"] == 100 // 16 and "loss_2" in out["final"]


def test_divergence_exit_code(capsys):
    with np.errstate(all="ignore"), pytest.warns(UserWarning):
        code = cli.main(["run", "--objective", "quadratic:d=4,cond=10", "--data", "noise:n=100,d=4",
                         "--batch", "20", "--lr", "fixed:5", "--steps", "400"])
    assert code == cli.EXIT_DIVERGED
    assert "diverged" in capsys.readouterr().err


@pytest.mark.parametrize("args", [["--topology", "torus"], ["--algo", "adam"], ["--lr", "dim:eps=3"],
                                  ["--config", "/nonexistent.json"], ["--data", "idx:/nope/a,/nope/b"]])
def test_config_error_exit_code(args, capsys):
    assert cli.main(["run", *FAST, *args]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_verify_failure_exit_code(capsys):
    with pytest.warns(UserWarning):
        code = cli.main(["run", "--topology", "ring:beta=0.2", "--objective", "quadratic:d=4,cond=2",
                         "--data", "noise:n=100,d=4", "--batch", "20", "--steps", "20", "--lr", "fixed:0.5",
                         "--verify"])
    assert code == cli.EXIT_VERIFY


def test_validate_topology(tmp_path, capsys):
    assert cli.main(["validate-topology", "--topology", "ring:beta=0.2", "--agents", "4", *FAST]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["ok"] and out["eigenvalues"] == pytest.approx([1.0, 0.6, 0.6, 0.2], abs=1e-10)
    InteractionMatrix(np.eye(5)).save(tmp_path / "eye.json")
    with pytest.warns(UserWarning):
        code = cli.main(["validate-topology", "--topology", f"file:{tmp_path / 'eye.json'}", *FAST])
    assert code == cli.EXIT_VERIFY


def test_bounds_subcommand(capsys):
    assert cli.main(["bounds", "--topology", "ring:beta=0.2", "--objective", "quadratic:d=4,cond=10",
                     "--data", "noise:n=100,d=4", "--batch", "20"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["spectrum"]["lambda2"] == pytest.approx(0.6 + 0.4 * np.cos(2 * np.pi / 5))
    assert out["max_stable_step_full_batch"]["admissible"]
    assert out["effective_constants"]["H_hat"] <= out["effective_constants"]["gamma_hat"]


def test_sweep_subcommand(tmp_path, capsys):
    assert cli.main(["sweep", *FAST, "--axis", "network_size", "--values", "2", "4",
                     "--out", str(tmp_path), "--plot"]) == 0
    assert (tmp_path / "summary.csv").exists() and (tmp_path / "sweep_overlay.svg").exists()
    assert "network_size=4: ok" in capsys.readouterr().out
