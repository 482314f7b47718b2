"""Bit-serial GEMM on a tiled Parallel Array, exact or with undervolting errors.

Operand orientation follows the hardware loop: ``A`` is ``[C_total, L_total]``
(activations), ``B`` is ``[K_total, C_total]`` (weights) and the product is
``P = B @ A`` with shape ``[K_total, L_total]``.

Every clock cycle the array evaluates one tile for one significance pair
``(ba, bb)``. Cycles are ordered tile-major (k-outer, l-middle, c-inner), then
``ba``, then ``bb``; each physical iPE therefore sees a single stream of outputs
whose previous element is the iPE's previous cycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Protocol

import numpy as np

from .core import ArrayShape, GavSchedule, IntMatrix, MAX_OPERAND_BITS, MIN_OPERAND_BITS, bit_slice
from .errors import ConfigError, NumericError, ShapeError

_INT64_MAX = (1 << 63) - 1


class ErrorSource(Protocol):
    """Anything that can corrupt the approximate cycles of an iPE stream."""

    def corrupt(self, stream: "IpeStream", rng: np.random.Generator) -> np.ndarray:
        """Return sampled outputs for ``stream.exact[stream.approx]``."""


@dataclass(frozen=True)
class GemmJob:
    A: IntMatrix
    B: IntMatrix
    shape: ArrayShape
    schedule: GavSchedule
    error_model: Optional[ErrorSource] = None
    seed: int = 0

    def __post_init__(self):
        if self.B.cols != self.A.rows:
            raise ShapeError(f"inner dimensions differ: B is {self.B.shape}, A is {self.A.shape}")
        for name, m, b in (("A", self.A, self.schedule.a_bits), ("B", self.B, self.schedule.b_bits)):
            if m.bits != b:
                raise ConfigError(f"{name} has {m.bits} bits but the schedule expects {b}")
            if not MIN_OPERAND_BITS <= m.bits <= MAX_OPERAND_BITS:
                raise ConfigError(f"{name} precision {m.bits} outside [{MIN_OPERAND_BITS}, {MAX_OPERAND_BITS}]")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(C_total, L_total, K_total)"""
        return self.A.rows, self.A.cols, self.B.rows


@dataclass(frozen=True)
class GemmResult:
    P: IntMatrix
    cycles: int
    approx_cycles: int
    tile_count: int

    def stats(self) -> dict:
        return {"cycles": self.cycles, "approx_cycles": self.approx_cycles, "tiles": self.tile_count}


@dataclass(frozen=True)
class Tile:
    ik: int
    il: int
    ic: int
    k: slice
    l: slice
    c: slice


def tile_grid(C_total: int, L_total: int, K_total: int, shape: ArrayShape) -> tuple[int, int, int]:
    return (
        max(1, math.ceil(C_total / shape.C)),
        max(1, math.ceil(L_total / shape.L)),
        max(1, math.ceil(K_total / shape.K)),
    )


def tile_iterator(C_total: int, L_total: int, K_total: int, shape: ArrayShape) -> Iterator[Tile]:
    """Tiles in k-outer, l-middle, c-inner order. Slices are clipped to the
    operand extent; the remainder of a partial tile is zero padding."""
    nc, nl, nk = tile_grid(C_total, L_total, K_total, shape)
    for ik in range(nk):
        for il in range(nl):
            for ic in range(nc):
                yield Tile(
                    ik, il, ic,
                    k=slice(ik * shape.K, min((ik + 1) * shape.K, K_total)),
                    l=slice(il * shape.L, min((il + 1) * shape.L, L_total)),
                    c=slice(ic * shape.C, min((ic + 1) * shape.C, C_total)),
                )


def ipe_column(a_vec, b_vec) -> int:
    """One inner-product element: popcount(a AND b)."""
    a = np.asarray(a_vec, dtype=bool)
    b = np.asarray(b_vec, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"iPE inputs differ in length: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a & b))


def peak_macs_per_cycle(shape: ArrayShape, a_bits: int, b_bits: int) -> float:
    return shape.macs / (a_bits * b_bits)


class IpeStream:
    """Per-iPE output streams of one GEMM job in cycle order.

    ``exact`` has shape ``(n_cycles, K, L)``; ``approx`` flags the cycles run at
    the undervolted supply. Input bit vectors are reconstructed on demand.
    """

    def __init__(self, a_planes, b_planes, exact, approx, shape: ArrayShape):
        self._a = a_planes  # (a_bits, nc, C, nl, L)
        self._b = b_planes  # (b_bits, nk, K, nc, C)
        self.exact = exact
        self.approx = approx
        self.shape = shape
        self.a_bits = a_planes.shape[0]
        self.b_bits = b_planes.shape[0]
        self.nc, self.nl = a_planes.shape[1], a_planes.shape[3]
        self.nk = b_planes.shape[1]

    @property
    def n_cycles(self) -> int:
        return self.exact.shape[0]

    @property
    def prev(self) -> np.ndarray:
        """Exact output of each iPE's previous cycle (0 before the first)."""
        p = np.zeros_like(self.exact)
        p[1:] = self.exact[:-1]
        return p

    def coords(self, idx) -> tuple[np.ndarray, ...]:
        idx = np.asarray(idx)
        passes = self.a_bits * self.b_bits
        tile, p = np.divmod(idx, passes)
        ba, bb = np.divmod(p, self.b_bits)
        ik, rest = np.divmod(tile, self.nl * self.nc)
        il, ic = np.divmod(rest, self.nc)
        return ik, il, ic, ba, bb

    def inputs(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Bit vectors fed to the array at cycles ``idx``.

        Returns ``a`` with shape ``(n, L, C)`` (one vector per array column) and
        ``b`` with shape ``(n, K, C)`` (one per array row). Negative indices
        denote the reset state (all zeros).
        """
        idx = np.asarray(idx)
        valid = idx >= 0
        ik, il, ic, ba, bb = self.coords(np.where(valid, idx, 0))
        a = self._a[ba, ic, :, il, :].transpose(0, 2, 1).astype(bool)
        b = self._b[bb, ik, :, ic, :].astype(bool)
        a[~valid] = False
        b[~valid] = False
        return a, b


def _padded_planes(job: GemmJob):
    C_total, L_total, K_total = job.dims
    sh = job.shape
    nc, nl, nk = tile_grid(C_total, L_total, K_total, sh)
    a_sl, b_sl = bit_slice(job.A), bit_slice(job.B)
    a = np.zeros((job.A.bits, nc * sh.C, nl * sh.L), dtype=np.uint8)
    a[:, :C_total, :L_total] = a_sl.planes
    b = np.zeros((job.B.bits, nk * sh.K, nc * sh.C), dtype=np.uint8)
    b[:, :K_total, :C_total] = b_sl.planes
    a = a.reshape(job.A.bits, nc, sh.C, nl, sh.L)
    b = b.reshape(job.B.bits, nk, sh.K, nc, sh.C)
    return a, b, a_sl.plane_weights(), b_sl.plane_weights()


def _exact_outputs(a, b) -> np.ndarray:
    """iPE outputs in stream layout ``(nk, nl, nc, a_bits, b_bits, K, L)``."""
    a_bits, nc, C, nl, L = a.shape
    b_bits, nk, K = b.shape[:3]
    # Counts are <= C, so float32 products are exact for any realistic C.
    af = a.reshape(a_bits, nc, C, nl * L).astype(np.float32)
    bf = b.transpose(0, 3, 1, 2, 4).reshape(b_bits, nc, nk * K, C).astype(np.float32)
    out = np.matmul(bf[None], af[:, None])  # (a_bits, b_bits, nc, nk*K, nl*L)
    out = out.reshape(a_bits, b_bits, nc, nk, K, nl, L).transpose(3, 5, 2, 0, 1, 4, 6)
    return np.rint(out).astype(np.int32)


def _stream(job: GemmJob):
    _check_overflow(job, tile_grid(*job.dims, job.shape)[0], _pass_weights(job))
    a, b, wa, wb = _padded_planes(job)
    out = _exact_outputs(a, b)
    nk, nl, nc, ab, bb, K, L = out.shape
    approx = np.broadcast_to(job.schedule.mode_grid(), (nk, nl, nc, ab, bb)).reshape(-1)
    stream = IpeStream(a, b, out.reshape(-1, K, L), np.ascontiguousarray(approx), job.shape)
    return stream, out.shape, np.outer(wa, wb)


def ipe_stream(job: GemmJob) -> IpeStream:
    return _stream(job)[0]


def _pass_weights(job: GemmJob) -> np.ndarray:
    def w(bits, signed):
        v = [1 << i for i in range(bits)]
        if signed:
            v[-1] = -v[-1]
        return np.array(v, dtype=np.int64)

    return np.outer(w(job.A.bits, job.A.signed), w(job.B.bits, job.B.signed))


def _check_overflow(job: GemmJob, n_ctiles: int, weights: np.ndarray) -> int:
    bound = n_ctiles * ((1 << job.shape.s_bits) - 1) * int(np.abs(weights).sum())
    if bound > _INT64_MAX:
        raise NumericError(f"accumulator bound {bound} exceeds 64-bit signed range")
    return bound


def _accumulate(job: GemmJob, values: np.ndarray, layout, weights) -> GemmResult:
    nk, nl, nc, ab, bb, K, L = layout
    bound = _check_overflow(job, nc, weights)
    v = values.reshape(layout).astype(np.int64)
    tiles = np.einsum("xyzabkl,ab->xkyl", v, weights.astype(np.int64), optimize=True)
    C_total, L_total, K_total = job.dims
    P = tiles.reshape(nk * K, nl * L)[:K_total, :L_total]
    n_tiles = nk * nl * nc
    cycles = n_tiles * ab * bb
    approx_cycles = n_tiles * int(job.schedule.mode_grid().sum())
    width = max(job.A.bits + job.B.bits + math.ceil(math.log2(max(C_total, 2))), bound.bit_length() + 1)
    return GemmResult(IntMatrix(P, bits=min(width, 64), signed=True), cycles, approx_cycles, n_tiles)


def gemm_exact(job: GemmJob) -> GemmResult:
    stream, layout, weights = _stream(job)
    return _accumulate(job, stream.exact, layout, weights)


def gemm_gav(job: GemmJob) -> GemmResult:
    """GEMM where approximate passes go through ``job.error_model``."""
    if job.error_model is None:
        raise ConfigError("gemm_gav needs an error model")
    stream, layout, weights = _stream(job)
    values = stream.exact
    if stream.approx.any():
        rng = np.random.default_rng(job.seed)
        sampled = job.error_model.corrupt(stream, rng)
        values = values.copy()
        values[stream.approx] = sampled
    return _accumulate(job, values, layout, weights)


def run_gemm(job: GemmJob) -> GemmResult:
    """Exact when no error model is attached, GAV otherwise."""
    return gemm_exact(job) if job.error_model is None else gemm_gav(job)
