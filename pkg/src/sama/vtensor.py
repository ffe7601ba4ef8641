"""VTensor binary container.

Layout: ``b"SAMT"``, version byte ``0x01``, rank (u8), each dimension as u32
little-endian, then float32 little-endian payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SAMT"
VERSION = 1


class VTensorError(ValueError):
    pass


def to_bytes(arr) -> bytes:
    a = np.asarray(arr, dtype="<f4", order="C")
    if a.ndim > 255:
        raise VTensorError(f"rank {a.ndim} exceeds 255")
    head = MAGIC + bytes([VERSION, a.ndim]) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes(order="C")


def from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise VTensorError("bad magic; not a VTensor file")
    if buf[4] != VERSION:
        raise VTensorError(f"unsupported VTensor version {buf[4]}")
    rank = buf[5]
    off = 6 + 4 * rank
    if len(buf) < off:
        raise VTensorError("truncated header")
    shape = struct.unpack(f"<{rank}I", buf[6:off])
    n = int(np.prod(shape, dtype=np.int64))
    if len(buf) != off + 4 * n:
        raise VTensorError(f"payload size {len(buf) - off} does not match shape {shape}")
    return np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float32).reshape(shape)


def save(path, arr) -> None:
    Path(path).write_bytes(to_bytes(arr))


def load(path) -> np.ndarray:
    return from_bytes(Path(path).read_bytes())
