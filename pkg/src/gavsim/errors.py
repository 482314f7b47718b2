"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GavError(Exception):
    exit_code = 1


class ConfigError(GavError):
    """Bad configuration: mismatched parameters, missing model, unknown precision."""

    exit_code = 2


class RangeError(GavError, ValueError):
    """A value does not fit the declared precision/signedness."""

    exit_code = 2


class ShapeError(GavError, ValueError):
    exit_code = 2


class CalibrationError(GavError):
    exit_code = 2


class InfeasibleError(GavError):
    exit_code = 3


class NumericError(GavError, ArithmeticError):
    """Accumulator overflow or undefined normalisation."""

    exit_code = 4
