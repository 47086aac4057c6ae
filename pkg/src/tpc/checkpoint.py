"""Checkpoint file: a versioned flat map of parameter paths to arrays, stored as JSON."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def flatten(sections):
    """``{"world_model": {"encoder/W": arr}}`` -> ``{"world_model/encoder/W": arr}``."""
    flat = {}
    for section, arrays in sections.items():
        for key, arr in arrays.items():
            flat[f"{section}/{key}"] = np.asarray(arr, dtype=float)
    return flat


def section(flat, name):
    prefix = name + "/"
    return {k[len(prefix):]: v for k, v in flat.items() if k.startswith(prefix)}


def save_checkpoint(path, sections, meta=None):
    params = {
        key: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
        for key, arr in sorted(flatten(sections).items())
    }
    doc = {"format_version": FORMAT_VERSION, "meta": meta or {}, "params": params}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Return ``(flat_arrays, meta)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    flat = {}
    for key, rec in doc["params"].items():
        shape = tuple(rec["shape"])
        values = np.asarray(rec["values"], dtype=float)
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"{key}: {values.size} values for shape {shape}")
        flat[key] = values.reshape(shape)
    return flat, doc.get("meta", {})
