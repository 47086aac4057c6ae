"""Metrics stream: newline-delimited JSON plus a flat CSV mirror with fixed columns."""

from __future__ import annotations

import csv
import json
from pathlib import Path

COLUMNS = (
    "step",
    "kind",
    "grad_steps",
    "episode_return",
    "tpc",
    "consistency",
    "spc",
    "reward",
    "total",
    "latent_std",
    "latent_std_min",
    "actor_loss",
    "value_loss",
    "mean_v_lambda",
    "agent_mse",
    "background_mse",
    "probe_r2_mean",
    "message",
)


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    def __init__(self, run_dir):
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        self.jsonl_path = run_dir / "metrics.jsonl"
        self.csv_path = run_dir / "metrics.csv"
        self._jsonl = open(self.jsonl_path, "w", encoding="utf-8")
        self._csv_fh = open(self.csv_path, "w", newline="", encoding="utf-8")
        self._csv = csv.writer(self._csv_fh, lineterminator="\n")
        self._csv.writerow(COLUMNS)
        self.records = []
        self.error_emitted = False

    def write(self, step, kind, **fields):
        unknown = set(fields) - set(COLUMNS)
        if unknown:
            raise KeyError(f"fields not in the metrics schema: {sorted(unknown)}")
        rec = {"step": int(step), "kind": kind}
        for key, value in fields.items():
            rec[key] = float(value) if isinstance(value, (int, float)) and key != "grad_steps" else value
        if kind == "error":
            self.error_emitted = True
        self.records.append(rec)
        self._jsonl.write(json.dumps(rec) + "\n")
        self._csv.writerow([_csv_cell(rec.get(c)) for c in COLUMNS])
        self._jsonl.flush()
        self._csv_fh.flush()
        return rec

    def close(self):
        self._jsonl.close()
        self._csv_fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
