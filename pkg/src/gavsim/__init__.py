"""Bit-serial GEMM simulation with per-pass undervolting (GAV)."""

from .core import ArrayShape, GavSchedule, IntMatrix, Mode, Precision
from .engine import GemmJob, GemmResult, gemm_exact, gemm_gav, run_gemm
from .errmodel import ErrorLut, calibrate, sample_errors
from .errors import (CalibrationError, ConfigError, GavError, InfeasibleError, NumericError, RangeError,
                     ShapeError)
from .metrics import ErrorStats, var_ned
from .power import PowerModel, default_calibration

__version__ = "0.1.0"

__all__ = [
    "ArrayShape", "GavSchedule", "IntMatrix", "Mode", "Precision",
    "GemmJob", "GemmResult", "gemm_exact", "gemm_gav", "run_gemm",
    "ErrorLut", "calibrate", "sample_errors",
    "CalibrationError", "ConfigError", "GavError", "InfeasibleError", "NumericError", "RangeError", "ShapeError",
    "ErrorStats", "var_ned", "PowerModel", "default_calibration",
]
