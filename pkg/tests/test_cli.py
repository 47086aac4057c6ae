import csv
import json

import pytest

from oracles import TINY_RUN_TOML
from tpc.cli import main
from tpc.harness.metrics import read_jsonl


@pytest.fixture()
def tiny_toml(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_RUN_TOML)
    return path


@pytest.fixture()
def trained(tmp_path, tiny_toml):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_toml), "--seed", "2", "--out", str(out)]) == 0
    return out


def last_checkpoint(run_dir):
    return sorted((run_dir / "checkpoints").glob("iter_*.json"))[-1]


def test_train_writes_run_directory(trained, tiny_toml):
    for name in ("config.toml", "manifest.json", "metrics.csv", "metrics.jsonl"):
        assert (trained / name).exists()
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["seed"] == 2
    assert manifest["config_source"] == str(tiny_toml)
    assert manifest["start_time"] and manifest["end_time"]
    assert manifest["code_version"]
    assert manifest["config"]["env"]["task"] == "pointmass_lite"
    kinds = [r["kind"] for r in read_jsonl(trained / "metrics.jsonl")]
    assert "error" not in kinds and kinds[-1] == "eval"


def test_train_overrides_recorded(tmp_path, tiny_toml):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_toml), "--set", "train.batch_size=3", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["overrides"] == ["train.batch_size=3"]
    assert manifest["config"]["train"]["batch_size"] == 3


def test_identical_manifests_give_identical_metrics(tmp_path, tiny_toml):
    for name in ("a", "b"):
        assert main(["train", "--config", str(tiny_toml), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_unknown_key_exits_nonzero(tmp_path, tiny_toml, capsys):
    code = main(["train", "--config", str(tiny_toml), "--set", "train.bogus=1", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "unknown config keys" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_missing_config_exits_nonzero(tmp_path):
    assert main(["train", "--config", str(tmp_path / "none.toml")]) == 2


def test_non_finite_run_records_error_and_exits_one(tmp_path, tiny_toml):
    out = tmp_path / "bad"
    code = main(["train", "--config", str(tiny_toml), "--set", "train.model_lr=1e30", "--out", str(out)])
    recs = read_jsonl(out / "metrics.jsonl")
    errors = [r for r in recs if r["kind"] == "error"]
    assert code == (1 if errors else 0)
    assert errors, "an absurd learning rate should end in a non-finite error record"


def test_eval(trained, tmp_path, capsys):
    out = tmp_path / "ev"
    code = main(["eval", str(last_checkpoint(trained)), "--episodes", "2", "--episode-length", "20",
                 "--out", str(out)])
    assert code == 0
    report = json.loads((out / "eval.json").read_text())
    assert len(report["returns"]) == 2 and report["episode_length"] == 20
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["mean"] == report["mean"]


def test_eval_dimension_mismatch(trained, tmp_path, capsys):
    code = main(["eval", str(last_checkpoint(trained)), "--set", "env.task=\"pendulum_lite\"",
                 "--episode-length", "20"])
    assert code == 2
    assert "action_dim" in capsys.readouterr().err


def test_eval_bad_checkpoint(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{}")
    assert main(["eval", str(bad)]) == 2


def test_probe(trained, tmp_path):
    out = tmp_path / "probe"
    code = main(["probe", str(last_checkpoint(trained)), "--episodes", "3", "--episode-length", "20",
                 "--decoder-steps", "10", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "probe_report.json").read_text())
    assert {"agent_mse", "background_mse", "r2", "latent_std"} <= set(report)
    assert (out / "probe_grid.pgm").read_bytes().startswith(b"P5")
    assert read_jsonl(out / "metrics.jsonl")[0]["kind"] == "probe"


def test_ablate(tmp_path, tiny_toml):
    out = tmp_path / "abl"
    code = main(["ablate", "--config", str(tiny_toml), "--seeds", "0", "1", "--no-smoothing",
                 "--stop-after-grad-steps", "2", "--out", str(out)])
    assert code == 0
    with open(out / "ablation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["variant"], r["seed"]) for r in rows] == [
        (v, s) for v in ("full_tpc", "spc_only", "unstable_tpc", "no_smoothing") for s in ("0", "1")
    ]
    assert all(r["grad_steps"] == "2" for r in rows)
    with open(out / "latent_std.csv", newline="") as fh:
        traj = list(csv.DictReader(fh))
    assert {r["variant"] for r in traj} == {"full_tpc", "spc_only", "unstable_tpc", "no_smoothing"}
    cfg = (out / "no_smoothing_seed0" / "config.toml").read_text()
    assert "no_smoothing = true" in cfg


def test_run_root_environment_variable(tmp_path, tiny_toml, monkeypatch):
    monkeypatch.setenv("TPC_RUN_ROOT", str(tmp_path / "root"))
    assert main(["train", "--config", str(tiny_toml), "--seed", "5"]) == 0
    assert (tmp_path / "root" / "tiny_seed5" / "manifest.json").exists()
