"""Checkpoints: named float32 tensors plus the echoed experiment config, in one ``.npz``."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig

_META = "__meta__"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ExperimentConfig
    params: dict[str, np.ndarray]
    n_classes: int
    dim: int
    history: list | None = None


def save_checkpoint(path, config: ExperimentConfig, params, n_classes: int, dim: int, history=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": "rhythmsel-ckpt-1",
        "config": config.to_dict(),
        "n_classes": n_classes,
        "dim": dim,
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "history": history or [],
    }
    arrays = {k: np.asarray(v, dtype=np.float32) for k, v in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, **arrays, **{_META: np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)})
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(bytes(data[_META]).decode())
            params = {k: data[k].copy() for k in data.files if k != _META}
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if meta.get("format") != "rhythmsel-ckpt-1":
        raise CheckpointError(f"{path} is not a rhythmsel checkpoint")
    for name, shape in meta["shapes"].items():
        if name not in params or list(params[name].shape) != shape:
            raise CheckpointError(f"tensor {name!r} missing or mis-shaped in {path}")
    config = ExperimentConfig.from_dict(meta["config"])
    return Checkpoint(config, params, int(meta["n_classes"]), int(meta["dim"]), meta.get("history"))
