"""Run directories: config snapshot, manifest, metrics stream and checkpoints."""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
import subprocess
from importlib import metadata
from pathlib import Path

from ..autodiff import DomainError, NonFiniteError
from .config import TrainConfig
from .metrics import MetricsWriter
from .trainer import Trainer

log = logging.getLogger("tpc")

RUN_ROOT_ENV = "TPC_RUN_ROOT"


def code_version():
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            version += "+g" + rev.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return version


def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def default_out(name):
    root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
    return root / name


def write_manifest(run_dir, config: TrainConfig, seed, overrides, started, ended=None, config_path=None):
    manifest = {
        "seed": seed,
        "code_version": code_version(),
        "config_source": str(config_path) if config_path else None,
        "overrides": list(overrides),
        "config": config.to_dict(),
        "start_time": started,
        "end_time": ended,
        "paths": {
            "config": "config.toml",
            "metrics_csv": "metrics.csv",
            "metrics_jsonl": "metrics.jsonl",
            "checkpoints": "checkpoints/",
        },
    }
    path = Path(run_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def train_run(config: TrainConfig, seed, run_dir, overrides=(), config_path=None, stop_after_grad_steps=None):
    """Train one agent into ``run_dir``. Returns ``(trainer, metrics, eval_returns)``."""
    run_dir = Path(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.toml").write_text(config.dumps(), encoding="utf-8")
    started = _now()
    write_manifest(run_dir, config, seed, overrides, started, config_path=config_path)
    returns = []
    with MetricsWriter(run_dir) as metrics:
        trainer = Trainer(config, seed=seed, metrics=metrics, checkpoint_dir=ckpt_dir)

        def progress(tr):
            last = tr.history[-1]
            log.info("env_steps=%d grad_steps=%d return=%.2f", tr.env_steps, tr.agent.grad_steps,
                     last.get("episode_return", float("nan")))

        try:
            returns = trainer.run(stop_after_grad_steps=stop_after_grad_steps, progress=progress)
        except (NonFiniteError, DomainError) as exc:
            log.error("training aborted: %s", exc)
            if not metrics.error_emitted:
                trainer._record("error", grad_steps=trainer.agent.grad_steps, message=f"run aborted: {exc}")
            trainer.save_checkpoint()
    write_manifest(run_dir, config, seed, overrides, started, _now(), config_path=config_path)
    return trainer, metrics, returns
