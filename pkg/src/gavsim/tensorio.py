"""GVT1 binary tensor container and small CSV import.

Layout (all little-endian)::

    b"GVT1" | u32 version | u32 dtype | u32 signed | u32 bits | u32 ndim | u32 dims[ndim] | i32 payload

Only ``dtype == 0`` (int32) exists.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import IntMatrix
from .errors import ConfigError

MAGIC = b"GVT1"
VERSION = 1
DTYPE_I32 = 0
_I32 = np.dtype("<i4")


@dataclass(frozen=True)
class Tensor:
    data: np.ndarray
    bits: int
    signed: bool


def encode(data: np.ndarray, bits: int, signed: bool = True) -> bytes:
    arr = np.asarray(data)
    if arr.size and (arr.min() < np.iinfo(np.int32).min or arr.max() > np.iinfo(np.int32).max):
        raise ConfigError("GVT1 payload must fit in int32")
    head = struct.pack("<4s5I", MAGIC, VERSION, DTYPE_I32, int(bool(signed)), bits, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + arr.astype(_I32).tobytes(order="C")


def decode(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Decode one record at ``offset``; returns the tensor and the end offset."""
    try:
        magic, version, dtype, signed, bits, ndim = struct.unpack_from("<4s5I", buf, offset)
    except struct.error:
        raise ConfigError("truncated GVT1 header") from None
    if magic != MAGIC:
        raise ConfigError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ConfigError(f"unsupported GVT1 version {version}")
    if dtype != DTYPE_I32:
        raise ConfigError(f"unsupported GVT1 dtype {dtype}")
    pos = offset + struct.calcsize("<4s5I")
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    end = pos + 4 * n
    if end > len(buf):
        raise ConfigError("truncated GVT1 payload")
    data = np.frombuffer(buf, dtype=_I32, count=n, offset=pos).astype(np.int64).reshape(dims)
    return Tensor(data, bits, bool(signed)), end


def write_tensor(path, data: np.ndarray, bits: int, signed: bool = True) -> None:
    Path(path).write_bytes(encode(data, bits, signed))


def read_tensor(path) -> Tensor:
    t, _ = decode(Path(path).read_bytes())
    return t


def write_matrix(path, m: IntMatrix) -> None:
    write_tensor(path, m.data, m.bits, m.signed)


def read_matrix(path) -> IntMatrix:
    t = read_tensor(path)
    if t.data.ndim != 2:
        raise ConfigError(f"{path}: expected a 2-D tensor, got ndim={t.data.ndim}")
    return IntMatrix(t.data, bits=t.bits, signed=t.signed)


def matrix_from_csv(text_or_path, bits: int, signed: bool = True) -> IntMatrix:
    """Parse a small comma-separated integer matrix (one row per line)."""
    if isinstance(text_or_path, Path) or (isinstance(text_or_path, str) and "\n" not in text_or_path and Path(text_or_path).exists()):
        text = Path(text_or_path).read_text()
    else:
        text = text_or_path
    rows = [[int(v) for v in r] for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if len({len(r) for r in rows}) > 1:
        raise ConfigError("ragged CSV matrix")
    return IntMatrix(np.array(rows, dtype=np.int64).reshape(len(rows), -1), bits=bits, signed=signed)
