"""Error metrics and characterization inputs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import IntMatrix
from .errors import NumericError, ShapeError


@dataclass(frozen=True)
class ErrorStats:
    var_ned: float
    mean_ned: float
    mse: float
    n: int
    e_max: float

    def to_dict(self) -> dict:
        return asdict(self)


def var_ned(exact, approx) -> ErrorStats:
    """Population variance of the normalized error distance.

    ``NED_i = (E_i - A_i) / max|E|`` over all samples (the maximum is taken
    over the whole run).
    """
    e = np.asarray(getattr(exact, "data", exact), dtype=np.float64).ravel()
    a = np.asarray(getattr(approx, "data", approx), dtype=np.float64).ravel()
    if e.shape != a.shape:
        raise ShapeError(f"exact has {e.size} samples, approx has {a.size}")
    e_max = float(np.max(np.abs(e))) if e.size else 0.0
    if e_max == 0.0:
        raise NumericError("all exact values are zero; NED normalisation undefined")
    diff = e - a
    ned = diff / e_max
    mean = float(ned.mean())
    var = float(np.mean((ned - mean) ** 2))
    return ErrorStats(var_ned=var, mean_ned=mean, mse=float(np.mean(diff * diff)), n=e.size, e_max=e_max)


def symmetric_quantize(x: np.ndarray, bits: int) -> tuple[np.ndarray, float]:
    """Per-tensor symmetric quantization to ``+-(2**(bits-1) - 1)``."""
    qmax = (1 << (bits - 1)) - 1
    amax = float(np.max(np.abs(x)))
    scale = amax / qmax if amax > 0 else 1.0
    q = np.clip(np.sign(x) * np.floor(np.abs(x) / scale + 0.5), -qmax, qmax)
    return q.astype(np.int64), scale


def gen_characterization_matrices(c_total: int = 4608, l_total: int = 64, k_total: int = 64,
                                  a_bits: int = 8, b_bits: int | None = None, seed: int = 0):
    """Random GEMM operands whose products are close to uniformly distributed.

    ``A`` (``[c_total, l_total]``) is drawn uniformly and quantized; a target
    product ``T`` is drawn uniformly and ``B = T pinv(A)`` is solved in floating
    point before quantization, so ``B @ A`` tracks ``T`` up to the
    quantization noise of ``B``. Needs ``c_total >= l_total``.
    """
    if c_total < l_total:
        raise ShapeError("the uniform-output construction needs c_total >= l_total")
    b_bits = a_bits if b_bits is None else b_bits
    rng = np.random.default_rng([seed, 0xC4A7])
    qa, _ = symmetric_quantize(rng.uniform(-1.0, 1.0, size=(c_total, l_total)), a_bits)
    target = rng.uniform(-1.0, 1.0, size=(k_total, l_total))
    b_float = target @ np.linalg.pinv(qa.astype(np.float64))
    qb, _ = symmetric_quantize(b_float, b_bits)
    return IntMatrix(qa, bits=a_bits), IntMatrix(qb, bits=b_bits)


def histogram_flatness(values, bins: int = 64) -> float:
    """max/min bin count of an equal-width histogram over the value range."""
    h, _ = np.histogram(np.asarray(values, dtype=np.float64).ravel(), bins=bins)
    return float(h.max() / h.min()) if h.min() > 0 else float("inf")
