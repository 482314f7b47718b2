"""Experiment pipelines shared by the CLI, the scripts and the acceptance suite."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import errmodel, nn, oracle
from .allocator import AllocationProblem, LayerProfile, profile_layers, solve_allocation
from .core import ArrayShape, GavSchedule, IntMatrix, Precision, random_int_matrix
from .engine import GemmJob, gemm_exact, gemm_gav, ipe_stream
from .errors import ConfigError
from .metrics import gen_characterization_matrices, var_ned
from .power import PowerModel
from .seeding import subseed, substream

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_SHAPE = nn.DESK_SHAPE
CALIB_DIMS = (576, 16, 16)
SWEEP_DIMS = (576, 16, 16)


@dataclass(frozen=True)
class OperatingPoint:
    """Netlist plus timing configuration of the undervolted iPE surrogate."""

    C: int = 32
    jitter_sigma: float = 0.15
    timing_seed: int = 2
    delay_scale: float = 1.0
    netlist_seed: Optional[int] = None

    def timing(self) -> oracle.TimingConfig:
        return oracle.TimingConfig(delay_scale=self.delay_scale, jitter_sigma=self.jitter_sigma, seed=self.timing_seed)

    def netlist(self) -> oracle.IpeNetlist:
        return oracle.build_ipe(self.C, self.netlist_seed)

    def injector(self) -> oracle.OracleInjector:
        return oracle.OracleInjector(self.netlist(), self.timing())

    def to_json(self) -> dict:
        return {"format": "gavsim-operating-point", "version": 1, **asdict(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "OperatingPoint":
        if obj.get("format") != "gavsim-operating-point":
            raise ConfigError("not a gavsim operating-point file")
        return cls(**{k: obj[k] for k in ("C", "jitter_sigma", "timing_seed", "delay_scale", "netlist_seed")})


def _prec(p) -> Precision:
    return p if isinstance(p, Precision) else Precision.parse(p) if isinstance(p, str) else Precision(*p)


def operands(kind: str, precision, seed: int, dims=SWEEP_DIMS, zero_fraction: float = 0.0):
    """GEMM operands ``A [C_total, L_total]`` and ``B [K_total, C_total]``.

    ``kind`` is ``"random"`` (uniform over the signed range), ``"relu"``
    (unsigned ``A`` with a ``zero_fraction`` of zeros, like post-ReLU
    activations) or ``"char"`` (near-uniform products, see
    :func:`gen_characterization_matrices`). ``B`` is signed in every case.
    """
    p = _prec(precision)
    c, l, k = dims
    if kind == "random":
        rng = substream(seed, "operands", str(p))
        return random_int_matrix(rng, c, l, p.a_bits), random_int_matrix(rng, k, c, p.b_bits)
    if kind == "relu":
        rng = substream(seed, "operands", "relu", str(p))
        a = random_int_matrix(rng, c, l, p.a_bits, signed=False).data.copy()
        a[rng.random(a.shape) < zero_fraction] = 0
        return IntMatrix(a, p.a_bits, signed=False), random_int_matrix(rng, k, c, p.b_bits)
    if kind == "char":
        return gen_characterization_matrices(c, l, k, p.a_bits, p.b_bits, seed=subseed(seed, "operands", str(p)))
    raise ConfigError(f"unknown operand kind {kind!r}")


def calibration_traces(op: OperatingPoint, precisions, seeds, *, shape: ArrayShape = DEFAULT_SHAPE,
                       dims=CALIB_DIMS, kind: str = "random", zero_fraction: float = 0.0) -> list:
    """Oracle traces of the approximate cycles of G=0 GEMMs."""
    inj = op.injector()
    out = []
    for p in map(_prec, precisions):
        for s in seeds:
            A, B = operands(kind, p, s, dims, zero_fraction)
            out.append(inj.traces(ipe_stream(GemmJob(A, B, shape, GavSchedule(p.a_bits, p.b_bits, 0)))))
    return out


def tune_operating_point(op: OperatingPoint, precision="a8w8", seed: int = 0, *, shape=DEFAULT_SHAPE,
                         dims=CALIB_DIMS, band=(0.005, 0.05)) -> tuple[OperatingPoint, float]:
    """Pick ``delay_scale`` so the mean bit-error rate of a G=0 GEMM lands in ``band``."""
    p = _prec(precision)
    A, B = operands("random", p, seed, dims)
    stream = ipe_stream(GemmJob(A, B, shape, GavSchedule(p.a_bits, p.b_bits, 0)))
    cfg, ber = oracle.tune_alpha(op.netlist(), replace(op.timing(), delay_scale=1.0),
                                 *oracle.approx_cycle_inputs(stream), band=band)
    return replace(op, delay_scale=cfg.delay_scale), ber


@dataclass
class CalibrationReport:
    op: OperatingPoint
    lut: errmodel.ErrorLut
    tune_ber: float
    trace_ber: float
    n_records: int


RELU_ZERO_FRACTIONS = (0.3, 0.6, 0.9)


def build_error_model(seed: int = 0, *, op: Optional[OperatingPoint] = None, precisions=("a4w4", "a8w8"),
                      n_streams: int = 3, n_density: int = 400_000, shape=DEFAULT_SHAPE,
                      dims=CALIB_DIMS) -> CalibrationReport:
    """Tune the operating point, collect oracle traces and calibrate a LUT.

    The trace set mixes dense signed GEMM streams, sparse unsigned-activation
    streams and density-pair cycles so that every (exact, previous) cell a
    network layer can reach is observed.
    """
    op = op or OperatingPoint(C=shape.C)
    if op.C != shape.C:
        raise ConfigError(f"operating point has C={op.C}, array has C={shape.C}")
    op, ber = tune_operating_point(op, seed=subseed(seed, "tune"), shape=shape, dims=dims)
    seeds = [subseed(seed, "trace", i) for i in range(n_streams)]
    traces = calibration_traces(op, precisions, seeds, shape=shape, dims=dims)
    for i, zf in enumerate(RELU_ZERO_FRACTIONS):
        traces += calibration_traces(op, precisions, [subseed(seed, "relu-trace", i)], shape=shape, dims=dims,
                                     kind="relu", zero_fraction=zf)
    if n_density:
        traces.append(oracle.generate_traces(op.netlist(), op.timing(), oracle.density_pair_inputs(), n_density,
                                             seed=subseed(seed, "density")))
    merged = oracle.ErrorTrace.concat(traces)
    lut = errmodel.calibrate(traces)
    return CalibrationReport(op, lut, ber, merged.mean_ber(), len(merged))


def fidelity(op: OperatingPoint, lut: errmodel.ErrorLut, precisions=("a4w4", "a8w8"), seed: int = 1000, *,
             n_matrices: int = 3, n_samples: int = 5, shape=DEFAULT_SHAPE, dims=CALIB_DIMS,
             kind: str = "random") -> list:
    """Model-injected against oracle-injected VAR_NED on held-out operands,
    one row per (precision, G) with at least one approximate pass."""
    inj = op.injector()
    rows = []
    for p in map(_prec, precisions):
        mats = [operands(kind, p, subseed(seed, "heldout", i), dims) for i in range(n_matrices)]
        for G in range(0, p.a_bits + p.b_bits - 1):
            sched = GavSchedule(p.a_bits, p.b_bits, G)
            vo, vm = [], []
            for i, (A, B) in enumerate(mats):
                exact = gemm_exact(GemmJob(A, B, shape, sched)).P
                vo.append(var_ned(exact, gemm_gav(GemmJob(A, B, shape, sched, inj)).P).var_ned)
                vm.append(np.mean([
                    var_ned(exact, gemm_gav(GemmJob(A, B, shape, sched, lut, seed=subseed(seed, "sample", str(p), G, i, k))).P).var_ned
                    for k in range(n_samples)
                ]))
            o, m = float(np.mean(vo)), float(np.mean(vm))
            rows.append({"precision": str(p), "G": G, "f": sched.approx_fraction(), "oracle_var_ned": o,
                         "model_var_ned": m, "rel_gap": (m - o) / o if o > 0 else float("nan")})
    return rows


SWEEP_COLUMNS = ("precision", "G", "f", "VAR_NED", "mW", "TOPs", "TOPsW")


def sweep(precisions, g_values, lut: Optional[errmodel.ErrorLut], power: PowerModel, seed: int = 0, *,
          n_seeds: int = 4, shape=DEFAULT_SHAPE, dims=SWEEP_DIMS, kind: str = "char") -> list:
    """Precision x G grid of mean VAR_NED, modeled power, throughput and efficiency.

    Operands depend only on (seed, precision, repetition) so every G sees the
    same matrices; ``g_values=None`` means the full range of each precision.
    """
    rows = []
    for p in map(_prec, precisions):
        gs = range(p.a_bits + p.b_bits) if g_values is None else g_values
        mats = [operands(kind, p, subseed(seed, "sweep", r), dims) for r in range(n_seeds)]
        exacts = None
        for G in gs:
            sched = GavSchedule(p.a_bits, p.b_bits, int(G))
            if sched.approx_fraction() == 0:
                vn = 0.0
            else:
                if lut is None:
                    raise ConfigError("approximate passes need an error model")
                if exacts is None:
                    exacts = [gemm_exact(GemmJob(A, B, shape, sched)).P for A, B in mats]
                vn = float(np.mean([
                    var_ned(E, gemm_gav(GemmJob(A, B, shape, sched, lut, seed=subseed(seed, "sample", str(p), int(G), r))).P).var_ned
                    for r, ((A, B), E) in enumerate(zip(mats, exacts))
                ]))
            rows.append({"precision": str(p), "G": int(G), "f": sched.approx_fraction(), "VAR_NED": vn,
                         "mW": power.average_power(p, sched), "TOPs": power.throughput_tops(p),
                         "TOPsW": power.efficiency(p, sched)})
    return sorted(rows, key=lambda r: (_prec(r["precision"]).product, r["precision"], r["G"]))


# -- network pipeline ---------------------------------------------------------------


def default_lut() -> errmodel.ErrorLut:
    return errmodel.ErrorLut.load(DATA_DIR / "lut_c32.json")


def default_operating_point() -> OperatingPoint:
    return OperatingPoint.from_json(json.loads((DATA_DIR / "operating_point_c32.json").read_text()))


def profile(model: nn.NetworkModel, lut, calib_images, g_candidates=None, seed: int = 0, *, n_rep: int = 5,
            shape=DEFAULT_SHAPE) -> list:
    if g_candidates is None:
        p = model.precision()
        g_candidates = list(range(p.a_bits + p.b_bits))
    return profile_layers(model, lut, g_candidates, calib_images, seed=seed, n_rep=n_rep, shape=shape)


def allocate(profiles: Sequence[LayerProfile], g_target, g_candidates=None):
    if g_candidates is None:
        g_candidates = sorted(set.intersection(*(set(p.mse_by_g) for p in profiles)))
    return solve_allocation(AllocationProblem(list(profiles), g_candidates, Fraction(str(g_target))))


def evaluate_plan(model: nn.NetworkModel, plan: nn.GavPlan, data: nn.Dataset, lut, power: PowerModel,
                  seeds: Sequence[int], *, shape=DEFAULT_SHAPE) -> dict:
    """Mean accuracy and energy per inference over ``seeds``."""
    runner = nn.Runner(model, shape=shape, lut=lut, power=power)
    accs, energies = [], []
    for s in seeds:
        res = runner.infer(plan, data.images, seed=s)
        accs.append(nn.accuracy(res.logits, data.labels))
        energies.append(res.energy_j / len(data.labels))
    return {"accuracy": float(np.mean(accs)), "accuracy_by_seed": accs, "energy_per_inference_j": float(np.mean(energies))}


def tradeoff(model, lut, power, data, profiles, g_targets, seeds, *, shape=DEFAULT_SHAPE) -> list:
    """Fully guarded baseline plus one allocator plan per target, with energy
    saving and accuracy drop against exact quantized inference."""
    exact_acc = nn.accuracy(nn.reference_forward(model, data.images)[-1], data.labels)
    base = evaluate_plan(model, nn.GavPlan.fully_guarded(model), data, None, power, seeds[:1], shape=shape)
    guarded = nn.GavPlan.fully_guarded(model).G_values()
    rows = [{"plan": "guarded", "g_target": None, "assignment": guarded, **base,
             "energy_saving": 0.0, "accuracy_drop_pp": 100 * (exact_acc - base["accuracy"])}]
    for t in g_targets:
        alloc = allocate(profiles, t)
        plan = nn.GavPlan.from_assignment(model, alloc.assignment)
        ev = evaluate_plan(model, plan, data, lut, power, seeds, shape=shape)
        rows.append({"plan": "allocated", "g_target": str(t), "assignment": alloc.assignment,
                     "weighted_avg_G": float(alloc.weighted_avg), **ev,
                     "energy_saving": 1 - ev["energy_per_inference_j"] / base["energy_per_inference_j"],
                     "accuracy_drop_pp": 100 * (exact_acc - ev["accuracy"])})
    return rows


def pareto(rows: Sequence[dict], x: str = "energy_saving", y: str = "accuracy") -> list:
    """Rows not dominated in (larger ``x``, larger ``y``), sorted by ``x``."""
    keep = []
    for r in rows:
        dominated = any(o[x] >= r[x] and o[y] >= r[y] and (o[x] > r[x] or o[y] > r[y]) for o in rows)
        if not dominated:
            keep.append(r)
    return sorted(keep, key=lambda r: (r[x], r[y]))
