"""Domain types: integer matrices, bit-plane slicing, array shape and the GAV schedule."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, RangeError, ShapeError

MIN_OPERAND_BITS = 2
MAX_OPERAND_BITS = 8


def value_range(bits: int, signed: bool) -> tuple[int, int]:
    """Inclusive two's-complement (or unsigned) range for ``bits``."""
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


def s_bits(c: int) -> int:
    """Width of an iPE output: ceil(log2(c + 1))."""
    return max(1, math.ceil(math.log2(c + 1)))


@dataclass(frozen=True, eq=False)
class IntMatrix:
    """Row-major integer matrix with a declared precision.

    Operands are limited to 2-8 bits; wider ``bits`` is allowed for results.
    """

    data: np.ndarray
    bits: int
    signed: bool = True

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ShapeError(f"IntMatrix needs 2-D data, got ndim={arr.ndim}")
        if not (np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool):
            if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
                raise RangeError("IntMatrix data must be integral")
        if not 1 <= self.bits <= 64:
            raise RangeError(f"bits={self.bits} outside [1, 64]")
        arr = arr.astype(np.int64)
        lo, hi = value_range(self.bits, self.signed)
        if arr.size and (arr.min() < lo or arr.max() > hi):
            kind = "signed" if self.signed else "unsigned"
            raise RangeError(f"values outside {kind} {self.bits}-bit range [{lo}, {hi}]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, IntMatrix):
            return NotImplemented
        return (
            self.bits == other.bits
            and self.signed == other.signed
            and self.shape == other.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __repr__(self):
        kind = "s" if self.signed else "u"
        return f"IntMatrix({self.rows}x{self.cols}, {kind}{self.bits})"


@dataclass(frozen=True, eq=False)
class BitSlicedMatrix:
    """Binary significance planes, LSB first: ``planes[i]`` holds bit i."""

    planes: np.ndarray  # (bits, rows, cols) uint8
    signed: bool

    @property
    def bits(self) -> int:
        return self.planes.shape[0]

    @property
    def rows(self) -> int:
        return self.planes.shape[1]

    @property
    def cols(self) -> int:
        return self.planes.shape[2]

    def plane_weights(self) -> np.ndarray:
        w = np.array([1 << i for i in range(self.bits)], dtype=np.int64)
        if self.signed:
            w[-1] = -w[-1]
        return w


def bit_slice(m: IntMatrix) -> BitSlicedMatrix:
    # Masking the two's-complement representation gives the planes directly.
    u = m.data & ((1 << m.bits) - 1)
    shifts = np.arange(m.bits, dtype=np.int64)[:, None, None]
    planes = ((u[None, :, :] >> shifts) & 1).astype(np.uint8)
    planes.setflags(write=False)
    return BitSlicedMatrix(planes=planes, signed=m.signed)


def reconstruct(s: BitSlicedMatrix) -> IntMatrix:
    vals = np.tensordot(s.plane_weights(), s.planes.astype(np.int64), axes=(0, 0))
    return IntMatrix(vals, bits=s.bits, signed=s.signed)


@dataclass(frozen=True)
class ArrayShape:
    """Parallel Array tile: C-long inner products, L columns, K rows."""

    C: int
    L: int
    K: int

    def __post_init__(self):
        if min(self.C, self.L, self.K) < 1:
            raise ConfigError(f"array shape must be positive, got {self}")

    @property
    def s_bits(self) -> int:
        return s_bits(self.C)

    @property
    def macs(self) -> int:
        return self.C * self.L * self.K


class Mode(enum.Enum):
    GUARD = "guard"
    APPROX = "approx"


@dataclass(frozen=True)
class GavSchedule:
    """Two-level voltage schedule controlled by one protection level ``G``.

    Pairs of combined significance ``ba + bb >= a_bits + b_bits - 1 - G`` run
    at the guarded voltage; everything below runs undervolted.
    """

    a_bits: int
    b_bits: int
    G: int
    v_guard: float = 0.55
    v_aprox: float = 0.35

    def __post_init__(self):
        for name in ("a_bits", "b_bits"):
            b = getattr(self, name)
            if not MIN_OPERAND_BITS <= b <= MAX_OPERAND_BITS:
                raise ConfigError(f"{name}={b} outside [{MIN_OPERAND_BITS}, {MAX_OPERAND_BITS}]")
        if not 0 <= self.G <= self.g_max:
            raise ConfigError(f"G={self.G} outside [0, {self.g_max}]")

    @property
    def g_max(self) -> int:
        return self.a_bits + self.b_bits - 1

    def mode(self, ba: int, bb: int) -> Mode:
        return schedule_mode(self, ba, bb)

    def mode_grid(self) -> np.ndarray:
        """Boolean (a_bits, b_bits) grid, True where the pass is approximate."""
        s = np.add.outer(np.arange(self.a_bits), np.arange(self.b_bits))
        return s < self.g_max - self.G

    def approx_fraction(self) -> float:
        return float(self.mode_grid().mean())

    @classmethod
    def fully_guarded(cls, a_bits: int, b_bits: int, **kw) -> "GavSchedule":
        return cls(a_bits, b_bits, a_bits + b_bits - 1, **kw)


def schedule_mode(s: GavSchedule, ba: int, bb: int) -> Mode:
    if not (0 <= ba < s.a_bits and 0 <= bb < s.b_bits):
        raise ValueError(f"pass ({ba}, {bb}) outside a{s.a_bits}w{s.b_bits}")
    return Mode.GUARD if ba + bb >= s.g_max - s.G else Mode.APPROX


def random_int_matrix(rng: np.random.Generator, rows: int, cols: int, bits: int, signed: bool = True) -> IntMatrix:
    lo, hi = value_range(bits, signed)
    return IntMatrix(rng.integers(lo, hi + 1, size=(rows, cols)), bits=bits, signed=signed)


@dataclass(frozen=True)
class Precision:
    a_bits: int
    b_bits: int

    def __str__(self):
        return f"a{self.a_bits}w{self.b_bits}"

    @classmethod
    def parse(cls, text: str) -> "Precision":
        t = text.strip().lower()
        try:
            a, w = t[1:].split("w")
            p = cls(int(a), int(w))
        except (ValueError, IndexError):
            raise ConfigError(f"cannot parse precision {text!r}, expected e.g. 'a4w4'") from None
        return p

    @property
    def product(self) -> int:
        return self.a_bits * self.b_bits


__all__ = [
    "ArrayShape",
    "BitSlicedMatrix",
    "GavSchedule",
    "IntMatrix",
    "Mode",
    "Precision",
    "bit_slice",
    "random_int_matrix",
    "reconstruct",
    "s_bits",
    "schedule_mode",
    "value_range",
]
