"""GPH1 binary tensors, JSON manifests and CSV tables.

GPH1 layout (all little-endian)::

    b"GPH1" | u32 rank | rank * u64 axis lengths | (f64 re, f64 im) * size

Values are stored in row-major (C) order.
"""
from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

MAGIC = b"GPH1"


class TensorFormatError(ValueError):
    pass


def write_tensor(path: str | os.PathLike, arr: np.ndarray) -> None:
    a = np.asarray(arr, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.tobytes(order="C"))


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise TensorFormatError(f"{path}: bad magic, not a GPH1 tensor")
        head = fh.read(4)
        if len(head) != 4:
            raise TensorFormatError(f"{path}: truncated header")
        (rank,) = struct.unpack("<I", head)
        dims = fh.read(8 * rank)
        if len(dims) != 8 * rank:
            raise TensorFormatError(f"{path}: truncated shape")
        shape = struct.unpack(f"<{rank}Q", dims)
        size = int(np.prod(shape, dtype=np.int64))
        payload = fh.read()
    if len(payload) != 16 * size:
        raise TensorFormatError(f"{path}: expected {16 * size} data bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<c16").reshape(shape).astype(complex)


def write_json(path: str | os.PathLike, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | os.PathLike) -> Any:
    return json.loads(Path(path).read_text())


def fmt(v: Any) -> str:
    """Deterministic cell formatting: floats round-trip exactly."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return " ".join(fmt(x) for x in v)
    return str(v)


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: str | os.PathLike) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
