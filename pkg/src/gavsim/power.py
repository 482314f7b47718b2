"""Average-power, throughput and efficiency model of the accelerator.

Power at a given schedule mixes the fully-guarded and fully-approximate
operating points linearly in the fraction of undervolted passes. Only the
approximate-region share of the power moves; the rest (memories, protected
logic) is constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ArrayShape, GavSchedule, MAX_OPERAND_BITS, MIN_OPERAND_BITS, Precision
from .errors import ConfigError

# Reported accelerator throughput (TOP/s) and efficiency bounds (TOP/sW,
# fully guarded - fully approximate) per precision.
REPORTED = {
    Precision(8, 8): (0.111, 3.56, 6.52),
    Precision(4, 4): (0.443, 12.52, 23.78),
    Precision(3, 3): (0.776, 19.37, 38.13),
    Precision(2, 2): (1.774, 45.87, 89.32),
}
REFERENCE_SHAPE = ArrayShape(C=576, L=8, K=16)
CLOCK_HZ = 50e6
REGION_RATIO = 3.5


@dataclass
class PowerModel:
    frequency_hz: float
    shape: ArrayShape
    table: dict  # Precision -> (guard mW, approx mW)
    region_ratio: float = REGION_RATIO
    utilization: float = 1.0
    v_mem: float = 0.40
    v_guard: float = 0.55
    v_aprox: float = 0.35
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.utilization <= 1:
            raise ConfigError(f"utilization must be in (0, 1], got {self.utilization}")
        if self.region_ratio <= 1:
            raise ConfigError("region_ratio must exceed 1")
        for p, (g, a) in self.table.items():
            if not a < g:
                raise ConfigError(f"{p}: approximate power {a} mW must be below guarded {g} mW")

    def endpoints(self, precision: Precision) -> tuple[float, float]:
        """(guarded, approximate) power in mW; uncalibrated precisions are
        interpolated linearly in ``a_bits * b_bits``."""
        precision = _as_precision(precision)
        if precision in self.table:
            return self.table[precision]
        for bits in (precision.a_bits, precision.b_bits):
            if not MIN_OPERAND_BITS <= bits <= MAX_OPERAND_BITS:
                raise ConfigError(f"no power calibration for {precision}")
        keys = sorted(self.table, key=lambda p: p.product)
        xs = [p.product for p in keys]
        if not xs[0] <= precision.product <= xs[-1]:
            raise ConfigError(f"{precision} lies outside the calibrated range")
        g = np.interp(precision.product, xs, [self.table[p][0] for p in keys])
        a = np.interp(precision.product, xs, [self.table[p][1] for p in keys])
        return float(g), float(a)

    def domains(self, precision: Precision) -> dict:
        """Split into constant rest and the approximate region at each voltage."""
        g, a = self.endpoints(precision)
        region_guard = (g - a) * self.region_ratio / (self.region_ratio - 1)
        return {"rest": g - region_guard, "region_guard": region_guard, "region_aprox": region_guard / self.region_ratio}

    def power_at_fraction(self, precision: Precision, f: float) -> float:
        if not 0.0 <= f <= 1.0:
            raise ConfigError(f"approx fraction {f} outside [0, 1]")
        g, a = self.endpoints(precision)
        if f == 0.0:
            return g
        if f == 1.0:
            return a
        d = self.domains(precision)
        return d["rest"] + d["region_guard"] * (1.0 - f) + d["region_aprox"] * f

    def average_power(self, precision: Precision, schedule: GavSchedule) -> float:
        return self.power_at_fraction(precision, schedule.approx_fraction())

    def throughput_tops(self, precision: Precision) -> float:
        precision = _as_precision(precision)
        return 2 * self.shape.macs * self.frequency_hz * self.utilization / precision.product / 1e12

    def efficiency(self, precision: Precision, schedule: GavSchedule) -> float:
        """TOP/sW."""
        return self.throughput_tops(precision) / (self.average_power(precision, schedule) / 1e3)

    def energy_joules(self, precision: Precision, schedule: GavSchedule, cycles: int) -> float:
        return self.average_power(precision, schedule) / 1e3 * cycles / self.frequency_hz

    def to_json(self) -> dict:
        return {
            "format": "gavsim-power",
            "version": 1,
            "frequency_hz": self.frequency_hz,
            "shape": [self.shape.C, self.shape.L, self.shape.K],
            "region_ratio": self.region_ratio,
            "utilization": self.utilization,
            "voltages": {"mem": self.v_mem, "guard": self.v_guard, "aprox": self.v_aprox},
            "table": {str(p): {"guard_mW": g, "approx_mW": a} for p, (g, a) in sorted(self.table.items(), key=lambda kv: kv[0].product)},
            "notes": self.notes,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PowerModel":
        if obj.get("format") != "gavsim-power" or obj.get("version") != 1:
            raise ConfigError("not a version-1 gavsim power calibration")
        v = obj["voltages"]
        return cls(
            frequency_hz=obj["frequency_hz"],
            shape=ArrayShape(*obj["shape"]),
            table={Precision.parse(k): (e["guard_mW"], e["approx_mW"]) for k, e in obj["table"].items()},
            region_ratio=obj["region_ratio"],
            utilization=obj["utilization"],
            v_mem=v["mem"], v_guard=v["guard"], v_aprox=v["aprox"],
            notes=obj.get("notes", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "PowerModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _as_precision(p) -> Precision:
    if isinstance(p, Precision):
        return p
    if isinstance(p, str):
        return Precision.parse(p)
    return Precision(*p)


def ideal_throughput_tops(shape: ArrayShape, precision: Precision, frequency_hz: float = CLOCK_HZ) -> float:
    return 2 * shape.macs * frequency_hz / _as_precision(precision).product / 1e12


def default_calibration() -> PowerModel:
    """Power table from reported throughput / efficiency; utilization from the
    a8w8 throughput against the ideal cycle law."""
    table = {p: (tops / lo * 1e3, tops / hi * 1e3) for p, (tops, lo, hi) in REPORTED.items()}
    u = REPORTED[Precision(8, 8)][0] / ideal_throughput_tops(REFERENCE_SHAPE, Precision(8, 8))
    return PowerModel(
        frequency_hz=CLOCK_HZ,
        shape=REFERENCE_SHAPE,
        table=table,
        utilization=u,
        notes={"interpolation": "linear in approximate-pass fraction (endpoints only are measured)"},
    )
