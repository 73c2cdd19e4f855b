"""Tensor construction and serialization.

A tensor is a dense row-major (C-contiguous) numpy array of float64. Checked
construction rejects NaN/Inf. Two on-disk forms are supported:

* binary: little-endian header ``{rank: u32, extents: u32 x rank}`` followed by
  the float64 payload in row-major order;
* JSON-lines debug dump: one ``{"shape": [...], "data": [...]}`` object per line.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "as_tensor",
    "read_tensor",
    "write_tensor",
    "dump_jsonl",
    "load_jsonl",
]


def as_tensor(data, shape=None, checked: bool = True) -> np.ndarray:
    """Coerce ``data`` to a C-contiguous float64 array.

    If ``shape`` is given the data is reshaped to it (the element count must
    match). In checked mode any NaN or Inf entry raises DomainError.
    """
    # np.asarray(order="C") rather than ascontiguousarray: the latter promotes
    # rank-0 arrays to rank 1.
    arr = np.asarray(data, dtype=np.float64, order="C")
    if not arr.flags["C_CONTIGUOUS"]:
        arr = arr.copy(order="C")
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise ShapeError(
                f"cannot view {arr.size} elements as shape {shape}"
            )
        arr = arr.reshape(shape)
    if checked and not np.all(np.isfinite(arr)):
        raise DomainError("tensor contains NaN or Inf")
    return arr


def write_tensor(path, arr) -> None:
    """Write ``arr`` to ``path`` in the little-endian binary format."""
    arr = as_tensor(arr)
    extents = arr.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *extents))
        fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def read_tensor(path, checked: bool = True) -> np.ndarray:
    """Read a tensor written by :func:`write_tensor`."""
    with open(path, "rb") as fh:
        raw = fh.read(4)
        if len(raw) != 4:
            raise ShapeError(f"{path}: truncated header")
        (rank,) = struct.unpack("<I", raw)
        raw = fh.read(4 * rank)
        if len(raw) != 4 * rank:
            raise ShapeError(f"{path}: truncated extents")
        extents = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(extents, dtype=np.int64)) if rank else 1
        payload = fh.read(8 * count)
        if len(payload) != 8 * count:
            raise ShapeError(f"{path}: truncated payload")
        if fh.read(1):
            raise ShapeError(f"{path}: trailing bytes after payload")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(extents)
    return as_tensor(arr, checked=checked)


def dump_jsonl(path, tensors) -> None:
    """Append-free debug dump: one JSON object per tensor, one per line."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for arr in tensors:
            arr = as_tensor(arr, checked=False)
            obj = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            fh.write(json.dumps(obj) + "\n")


def load_jsonl(path, checked: bool = True) -> list[np.ndarray]:
    """Read tensors dumped by :func:`dump_jsonl`."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(as_tensor(obj["data"], shape=obj["shape"], checked=checked))
    return out
