"""Look-up-table undervolting error model for iPE outputs.

For output bit ``b`` the table ``tables[b]`` has shape
``(C + 1, p_bins, 2 ** min(n_nei, S_BITS - 1 - b))`` and holds the probability
that ``b`` flips given the exact output, the bin of the previous output and
the error pattern already sampled on the ``n_nei`` bits above ``b``
(bit ``j`` of the condition index is the error on bit ``b + 1 + j``).
Bits are sampled MSB first.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .core import s_bits
from .errors import CalibrationError, ConfigError

DEFAULT_N_NEI = 2
DEFAULT_P_BINS = 16
DEFAULT_LAMBDA = 0.5


def prev_bin(prev_output, C: int, p_bins: int):
    """Equal-width bin of a previous output over ``[0, C]``."""
    p = np.asarray(prev_output, dtype=np.int64)
    b = np.minimum(p * p_bins // (C + 1), p_bins - 1)
    return int(b) if b.ndim == 0 else b


def n_conditions(bit: int, sb: int, n_nei: int) -> int:
    return 1 << min(n_nei, sb - 1 - bit)


@dataclass
class ErrorLut:
    C: int
    n_nei: int
    p_bins: int
    tables: list[np.ndarray]
    counts: list[np.ndarray] = field(default_factory=list)
    flips: list[np.ndarray] = field(default_factory=list)
    lam: float = DEFAULT_LAMBDA
    source_digest: str = ""

    def __post_init__(self):
        sb = self.s_bits
        if len(self.tables) != sb:
            raise ConfigError(f"expected {sb} tables for C={self.C}, got {len(self.tables)}")
        for b, t in enumerate(self.tables):
            want = (self.C + 1, self.p_bins, n_conditions(b, sb, self.n_nei))
            if t.shape != want:
                raise ConfigError(f"table for bit {b} has shape {t.shape}, expected {want}")
            if np.any(t < 0) or np.any(t > 1):
                raise ConfigError(f"table for bit {b} has probabilities outside [0, 1]")
        if not self.counts:
            self.counts = [np.zeros(t.shape, dtype=np.int64) for t in self.tables]
            self.flips = [np.zeros(t.shape, dtype=np.int64) for t in self.tables]

    @property
    def s_bits(self) -> int:
        return s_bits(self.C)

    @classmethod
    def zeros(cls, C: int, n_nei: int = DEFAULT_N_NEI, p_bins: int = DEFAULT_P_BINS) -> "ErrorLut":
        sb = s_bits(C)
        return cls(C, n_nei, p_bins, [np.zeros((C + 1, p_bins, n_conditions(b, sb, n_nei))) for b in range(sb)], lam=0.0)

    @classmethod
    def constant(cls, C: int, probs: dict, n_nei: int = DEFAULT_N_NEI, p_bins: int = DEFAULT_P_BINS) -> "ErrorLut":
        """Every cell of bit ``b`` set to ``probs.get(b, 0)``."""
        lut = cls.zeros(C, n_nei, p_bins)
        for b, p in probs.items():
            lut.tables[b][...] = p
        return lut

    def full_table(self) -> np.ndarray:
        """Dense ``[S_BITS, C+1, p_bins, 2**n_nei]`` view; unused conditions are 0."""
        out = np.zeros((self.s_bits, self.C + 1, self.p_bins, 1 << self.n_nei))
        for b, t in enumerate(self.tables):
            out[b, :, :, : t.shape[2]] = t
        return out

    def corrupt(self, stream, rng: np.random.Generator) -> np.ndarray:
        if stream.shape.C != self.C:
            raise ConfigError(f"LUT calibrated for C={self.C}, array has C={stream.shape.C}")
        approx = stream.approx
        return sample_errors(stream.exact[approx], stream.prev[approx], self, rng)

    # -- persistence -------------------------------------------------------

    def to_json(self) -> dict:
        def enc(a, dt):
            return base64.b64encode(np.ascontiguousarray(a, dtype=dt).tobytes()).decode("ascii")

        return {
            "format": "gavsim-lut",
            "version": 1,
            "C": self.C,
            "S_BITS": self.s_bits,
            "n_nei": self.n_nei,
            "p_bins": self.p_bins,
            "lambda": self.lam,
            "source_digest": self.source_digest,
            "tables": [
                {
                    "bit": b,
                    "shape": list(t.shape),
                    "prob": enc(t, "<f8"),
                    "counts": enc(self.counts[b], "<i8"),
                    "flips": enc(self.flips[b], "<i8"),
                }
                for b, t in enumerate(self.tables)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ErrorLut":
        if obj.get("format") != "gavsim-lut" or obj.get("version") != 1:
            raise ConfigError("not a version-1 gavsim LUT file")
        if obj["S_BITS"] != s_bits(obj["C"]):
            raise ConfigError("S_BITS inconsistent with C")

        def dec(s, dt, shape):
            return np.frombuffer(base64.b64decode(s), dtype=dt).reshape(shape).copy()

        ents = sorted(obj["tables"], key=lambda e: e["bit"])
        return cls(
            C=obj["C"],
            n_nei=obj["n_nei"],
            p_bins=obj["p_bins"],
            tables=[dec(e["prob"], "<f8", e["shape"]) for e in ents],
            counts=[dec(e["counts"], "<i8", e["shape"]) for e in ents],
            flips=[dec(e["flips"], "<i8", e["shape"]) for e in ents],
            lam=obj["lambda"],
            source_digest=obj.get("source_digest", ""),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "ErrorLut":
        return cls.from_json(json.loads(Path(path).read_text()))


def _cond_index(err_bits: np.ndarray, bit: int, sb: int, n_nei: int) -> np.ndarray:
    """Condition index for ``bit`` from a ``(..., S_BITS)`` error-bit array."""
    m = min(n_nei, sb - 1 - bit)
    cond = np.zeros(err_bits.shape[:-1], dtype=np.int64)
    for j in range(m):
        cond |= err_bits[..., bit + 1 + j].astype(np.int64) << j
    return cond


def trace_digest(traces) -> str:
    h = hashlib.sha256()
    for t in traces:
        for arr in (t.exact, t.prev, t.sampled):
            h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
    return h.hexdigest()[:16]


def calibrate(traces: Union[Iterable, "object"], n_nei: int = DEFAULT_N_NEI, p_bins: int = DEFAULT_P_BINS,
              lam: float = DEFAULT_LAMBDA) -> ErrorLut:
    """Fill the tables with smoothed empirical flip frequencies.

    A cell with ``n`` observations and ``k`` flips gets ``(k + lam) / (n + 2 lam)``;
    unobserved cells stay at 0.
    """
    if hasattr(traces, "exact"):
        traces = [traces]
    traces = list(traces)
    if not traces or sum(len(t) for t in traces) == 0:
        raise CalibrationError("no trace records to calibrate from")
    if len({t.C for t in traces}) != 1:
        raise CalibrationError("traces disagree on C")
    C = traces[0].C
    sb = s_bits(C)
    exact = np.concatenate([t.exact for t in traces])
    prev = np.concatenate([t.prev for t in traces])
    sampled = np.concatenate([t.sampled for t in traces])
    errs = (((exact ^ sampled)[:, None] >> np.arange(sb)) & 1).astype(bool)
    pb = prev_bin(prev, C, p_bins)
    tables, counts, flips = [], [], []
    for b in range(sb):
        nc = n_conditions(b, sb, n_nei)
        shape = (C + 1, p_bins, nc)
        flat = (exact * p_bins + pb) * nc + _cond_index(errs, b, sb, n_nei)
        size = (C + 1) * p_bins * nc
        cnt = np.bincount(flat, minlength=size).reshape(shape)
        flp = np.bincount(flat, weights=errs[:, b], minlength=size).round().astype(np.int64).reshape(shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            prob = np.where(cnt > 0, (flp + lam) / (cnt + 2 * lam), 0.0)
        tables.append(prob)
        counts.append(cnt)
        flips.append(flp)
    return ErrorLut(C, n_nei, p_bins, tables, counts, flips, lam=lam, source_digest=trace_digest(traces))


def sample_errors(exact_seq, prev_seq, lut: ErrorLut, rng: np.random.Generator) -> np.ndarray:
    """Flip bits of ``exact_seq`` according to the LUT, MSB first."""
    exact = np.asarray(exact_seq, dtype=np.int64)
    prev = np.asarray(prev_seq, dtype=np.int64)
    if exact.shape != prev.shape:
        raise ConfigError(f"exact {exact.shape} and prev {prev.shape} sequences are not aligned")
    if exact.size and (exact.min() < 0 or exact.max() > lut.C or prev.min() < 0 or prev.max() > lut.C):
        raise ConfigError(f"values outside [0, {lut.C}] for a LUT calibrated at C={lut.C}")
    sb = lut.s_bits
    pb = prev_bin(prev, lut.C, lut.p_bins)
    errs = np.zeros(exact.shape + (sb,), dtype=bool)
    mask = np.zeros_like(exact)
    for b in range(sb - 1, -1, -1):
        cond = _cond_index(errs, b, sb, lut.n_nei)
        p = lut.tables[b][exact, pb, cond]
        e = rng.random(exact.shape) < p
        errs[..., b] = e
        mask |= e.astype(np.int64) << b
    return exact ^ mask
