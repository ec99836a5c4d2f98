import csv
import json
import subprocess
import sys

import pytest

from dynoid import cli
from dynoid.errors import TrainingError

SUBCOMMANDS = ["gen-data", "train", "eval", "reduce", "diagnose", "sweep"]
TINY = ["--n-train", "4", "--n-valid", "2", "--n-test", "2"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("DYNOID_SEED", raising=False)


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        run(cmd, "--help")
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--out", "--config", "--seed", "--threads"):
        assert flag in text


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "dynoid", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in SUBCOMMANDS:
        assert cmd in res.stdout


def test_gen_data_defaults(tmp_path, capsys):
    assert run("gen-data", "--out", tmp_path) == 0
    assert len((tmp_path / "dataset.jsonl").read_text().splitlines()) == 100
    assert "60 train / 20 valid / 20 test" in capsys.readouterr().out
    echoed = json.loads((tmp_path / "config.gen-data.json").read_text())
    assert echoed["system"] == "tank" and echoed["seed"] == 0


def test_gen_data_rerun_identical(tmp_path):
    run("gen-data", "--out", tmp_path / "a", "--seed", 3, *TINY)
    run("gen-data", "--out", tmp_path / "b", "--seed", 3, *TINY)
    for name in ("header.json", "dataset.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_env_seed_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("DYNOID_SEED", "3")
    run("gen-data", "--out", tmp_path / "a", "--seed", 99, *TINY)
    monkeypatch.delenv("DYNOID_SEED")
    run("gen-data", "--out", tmp_path / "b", "--seed", 3, *TINY)
    assert (tmp_path / "a" / "dataset.jsonl").read_bytes() == (tmp_path / "b" / "dataset.jsonl").read_bytes()
    assert json.loads((tmp_path / "a" / "config.gen-data.json").read_text())["seed"] == 3


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "data": {"n_train": 3, "n_valid": 1, "n_test": 1, "length": 60}}))
    run("gen-data", "--config", cfg, "--out", tmp_path / "o", "--n-train", 2)
    header = json.loads((tmp_path / "o" / "header.json").read_text())
    assert len(header["splits"]["train"]) == 2 and len(header["splits"]["test"]) == 1
    echoed = json.loads((tmp_path / "o" / "config.gen-data.json").read_text())
    assert echoed["seed"] == 5 and echoed["data"]["n_train"] == 2


def test_invalid_system(tmp_path, capsys):
    assert run("gen-data", "--system", "boat", "--out", tmp_path) == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "tank" in err and "drone2d" in err


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sytem": "tank"}))
    assert run("gen-data", "--config", cfg, "--out", tmp_path) == cli.EXIT_USAGE


def test_malformed_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"seed": 1,\n oops}')
    assert run("gen-data", "--config", cfg, "--out", tmp_path) == cli.EXIT_IO
    assert "cfg.json:2" in capsys.readouterr().err


def test_missing_dataset(tmp_path, capsys):
    assert run("train", "--out", tmp_path, "--data", tmp_path / "nowhere") == cli.EXIT_IO
    assert "nowhere" in capsys.readouterr().err


def test_version_mismatch(tmp_path, capsys):
    run("gen-data", "--out", tmp_path, *TINY)
    h = tmp_path / "header.json"
    h.write_text(h.read_text().replace('"format_version": 1', '"format_version": 2'))
    assert run("train", "--out", tmp_path, "--windows", 2, "--epochs", 1) == cli.EXIT_IO
    err = capsys.readouterr().err
    assert "2" in err and "1" in err and "version" in err


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    run("gen-data", "--out", tmp_path, *TINY)

    def boom(*a, **k):
        raise TrainingError("non-finite training loss", 3)

    monkeypatch.setattr("dynoid.regressor.train_regressor", boom)
    assert run("train", "--out", tmp_path, "--windows", 2, "--epochs", 1) == cli.EXIT_NUMERIC


def test_bad_threads():
    with pytest.raises(SystemExit) as exc:
        run("gen-data", "--threads", 0)
    assert exc.value.code == 2


def test_drone_diagnose_capability(tmp_path):
    assert run("diagnose", "--system", "drone2d", "--out", tmp_path) == cli.EXIT_USAGE


def test_pipeline_six_windows_and_rates(tmp_path):
    out = tmp_path / "run"
    common = ["--out", out, "--windows", "5,10,15,20,25,30"]
    assert run("gen-data", "--out", out, *TINY) == 0
    assert run("train", *common, "--epochs", 1, "--hidden", 4) == 0
    for ell in (5, 10, 15, 20, 25, 30):
        assert (out / f"ell_{ell}" / "model.json").exists()
        curve = rows(out / f"ell_{ell}" / "loss_curve.csv")
        assert curve[0] == ["epoch", "train_loss", "valid_loss"] and len(curve) == 2
    assert run("eval", *common) == 0
    summary = rows(out / "eval_summary.csv")
    assert summary[0] == ["window_size", "horizon", "n_trajectories", "mse"] and len(summary) == 7
    assert len(rows(out / "eval.csv")) == 1 + 6 * 2
    assert run("reduce", *common, "--ae-epochs", 1, "--ae-hidden", 4) == 0
    sweep = rows(out / "sweep.csv")
    assert sweep[0] == ["window_size", "rate", "latent_dim", "recon_mse", "rollout_mse"]
    assert len(sweep) == 37
    assert (out / "ell_30" / "rate_0.90" / "autoencoder.json").exists()


def test_diagnose_outputs(tmp_path, capsys):
    assert run("diagnose", "--out", tmp_path, "--trials", 5, "--samples", 5000, "--grid", 51,
               "--lemma-steps", 3) == 0
    data = json.loads((tmp_path / "diagnostics.json").read_text())
    assert len(data["samples"]) == 5 and data["satisfaction_fraction"] == 1.0
    assert len(rows(tmp_path / "diagnostics.csv")) == 6
    assert len(rows(tmp_path / "lemma1.csv")) == 4
    assert "bound satisfied" in capsys.readouterr().out


def test_sweep_command_deterministic(tmp_path):
    args = [*TINY, "--windows", "3", "--epochs", 2, "--hidden", 4, "--rates", "0.5", "--ae-epochs", 1,
            "--ae-hidden", 4]
    assert run("sweep", "--out", tmp_path / "a", *args) == 0
    assert run("sweep", "--out", tmp_path / "b", *args) == 0
    for name in ("eval.csv", "eval_summary.csv", "sweep.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
