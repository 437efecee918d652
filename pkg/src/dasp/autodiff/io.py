"""Tensor persistence: 2-D CSV and a binary checkpoint container.

Container layout (all little-endian)::

    b"DTEN" | u32 record count
    per record: u16 name length | utf-8 name | u32 ndim | u64 extent * ndim | f64 payload
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = ["save_csv", "load_csv", "save_tensors", "load_tensors", "CorruptContainerError"]

MAGIC = b"DTEN"


class CorruptContainerError(ValueError):
    pass


def save_csv(path, array) -> None:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"CSV export needs a 2-D array, got shape {arr.shape}")
    np.savetxt(path, arr, delimiter=",", fmt="%.17g")


def load_csv(path) -> np.ndarray:
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))
    except ValueError as exc:
        raise ValueError(f"{path}: malformed CSV ({exc})") from exc


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(getattr(value, "data", value), dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CorruptContainerError(f"{path}: bad magic")
    pos = 4
    out: dict[str, np.ndarray] = {}
    try:
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            n = int(np.prod(shape))
            if pos + 8 * n > len(buf):
                raise CorruptContainerError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
            pos += 8 * n
    except struct.error as exc:
        raise CorruptContainerError(f"{path}: truncated header") from exc
    return out
