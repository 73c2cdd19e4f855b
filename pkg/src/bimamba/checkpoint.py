"""Checkpoint directories: one binary tensor file per parameter + a manifest.

The manifest records every tensor's shape and an arbitrary JSON-serializable
config so a checkpoint is self-describing.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .tensor import read_tensor, write_tensor

__all__ = ["save_checkpoint", "load_checkpoint"]

MANIFEST = "manifest.json"


def _value(t):
    return t.value if hasattr(t, "value") else np.asarray(t, dtype=np.float64)


def save_checkpoint(dirpath, named_tensors: dict, config: dict) -> None:
    """Write tensors (Variables or arrays) and a manifest under ``dirpath``."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for name, t in sorted(named_tensors.items()):
        arr = _value(t)
        write_tensor(dirpath / f"{name}.bin", arr)
        shapes[name] = list(arr.shape)
    manifest = {"schema_version": 1, "tensors": shapes, "config": config}
    with open(dirpath / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(dirpath):
    """Read a checkpoint directory; returns (tensors, config)."""
    dirpath = Path(dirpath)
    with open(dirpath / MANIFEST, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    tensors = {}
    for name, shape in manifest["tensors"].items():
        arr = read_tensor(dirpath / f"{name}.bin")
        if list(arr.shape) != list(shape):
            raise ShapeError(f"{name}: manifest says {shape}, file has {list(arr.shape)}")
        tensors[name] = arr
    return tensors, manifest.get("config", {})
