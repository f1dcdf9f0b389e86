"""The ``ADPT`` binary tensor format shared by clips and checkpoints.

Layout: magic ``b"ADPT"``, u32 version (1), u32 rank, ``rank`` u32 extents,
then the row-major payload as little-endian float32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ADPT"
VERSION = 1


class TensorFormatError(ValueError):
    pass


def to_bytes(array) -> bytes:
    arr = np.asarray(array)
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def from_bytes(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise TensorFormatError(f"{source}: missing ADPT magic")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise TensorFormatError(f"{source}: unsupported version {version}")
    head = 12 + 4 * rank
    if len(buf) < head:
        raise TensorFormatError(f"{source}: truncated header (rank {rank})")
    shape = struct.unpack_from(f"<{rank}I", buf, 12)
    expected = head + 4 * int(np.prod(shape, dtype=np.int64))
    if len(buf) != expected:
        raise TensorFormatError(
            f"{source}: expected {expected} bytes for shape {tuple(shape)}, found {len(buf)}")
    return np.frombuffer(buf, dtype="<f4", offset=head).astype(np.float64).reshape(shape)


def save_tensor(path, array) -> None:
    Path(path).write_bytes(to_bytes(array))


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    return from_bytes(path.read_bytes(), source=str(path))
