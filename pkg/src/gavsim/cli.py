"""Command-line entry point: ``gavsim <subcommand> [--config run.json] [flags]``.

Option values resolve as built-in default < config file < explicit flag. Every
command that writes ``--out`` also writes ``<out>.config.json`` with the
resolved options and their hash; CSV outputs start with a comment line
``# gavsim-<table> v<version> config=<hash>``. Failures print one JSON
record to stderr and exit with 2 (configuration), 3 (infeasible) or
4 (numeric).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__, errmodel, experiments, nn, oracle, tensorio
from .allocator import LayerProfile
from .core import ArrayShape, GavSchedule, IntMatrix, Precision
from .engine import GemmJob, gemm_exact, gemm_gav
from .errors import ConfigError, GavError
from .metrics import var_ned
from .power import PowerModel, default_calibration

CSV_VERSION = 1
_NOT_HASHED = {"out", "config"}


# -- option plumbing ------------------------------------------------------------------


class Command:
    def __init__(self, name: str, func: Callable, help: str, options: dict):
        self.name, self.func, self.help, self.options = name, func, help, options


COMMANDS: dict[str, Command] = {}


def command(name: str, help: str, **options):
    """Register a subcommand; each option is ``name=(default, type, help)``."""

    def deco(func):
        COMMANDS[name] = Command(name, func, help, options)
        return func

    return deco


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gavsim", description="Bit-serial GEMM simulation with guarded undervolting.")
    p.add_argument("--version", action="version", version=f"gavsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS.values():
        sp = sub.add_parser(cmd.name, help=cmd.help, description=cmd.help)
        sp.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of option values")
        for opt, (default, typ, hlp) in cmd.options.items():
            flag = "--" + opt.replace("_", "-")
            if typ is bool:
                sp.add_argument(flag, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS,
                                help=f"{hlp} (default: {default})")
            else:
                sp.add_argument(flag, type=typ, default=argparse.SUPPRESS, help=f"{hlp} (default: {default})")
    return p


def resolve(cmd: Command, ns: argparse.Namespace) -> dict:
    cfg = {k: d for k, (d, _, _) in cmd.options.items()}
    given = {k: v for k, v in vars(ns).items() if k not in ("command",)}
    if "config" in given:
        path = Path(given["config"])
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path}: {e}") from None
        file_cfg = file_cfg.get(cmd.name, file_cfg) if isinstance(file_cfg, dict) else {}
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown option(s) for {cmd.name}: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update({k: v for k, v in given.items() if k != "config"})
    return cfg


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k not in _NOT_HASHED}
    return hashlib.sha256(json.dumps(body, sort_keys=True, default=str).encode()).hexdigest()[:12]


def write_snapshot(out: Path, command_name: str, cfg: dict) -> None:
    snap = {"command": command_name, "gavsim_version": __version__, "config_hash": config_hash(cfg),
            "created_unix": int(time.time()), "config": cfg}
    Path(str(out) + ".config.json").write_text(json.dumps(snap, indent=2, sort_keys=True, default=str))


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".12g")
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else str(v)


def render_csv(table: str, columns, rows, cfg_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# gavsim-{table} v{CSV_VERSION} config={cfg_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def read_csv(path) -> tuple[str, list]:
    """Returns (header comment, rows as dicts of strings)."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# gavsim-"):
        raise ConfigError(f"{path}: missing gavsim CSV header")
    return lines[0], list(csv.DictReader(lines[1:]))


def emit(cfg: dict, command_name: str, text: str) -> None:
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        write_snapshot(out, command_name, cfg)
    else:
        sys.stdout.write(text)


def emit_json(cfg: dict, command_name: str, obj) -> None:
    emit(cfg, command_name, json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


# -- parsing helpers -----------------------------------------------------------------------


def parse_ints(text, name: str) -> list:
    try:
        vals = []
        for part in str(text).split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                vals.extend(range(int(lo), int(hi) + 1))
            elif part:
                vals.append(int(part))
        return vals
    except ValueError:
        raise ConfigError(f"--{name.replace('_', '-')}: cannot parse {text!r} as integers") from None


def parse_shape(text) -> ArrayShape:
    vals = parse_ints(text, "shape")
    if len(vals) != 3:
        raise ConfigError(f"--shape needs C,L,K, got {text!r}")
    return ArrayShape(*vals)


def parse_precisions(text) -> list:
    return [Precision.parse(p.strip()) for p in str(text).split(",") if p.strip()]


def _require(cfg: dict, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"file {p} not found")
    return p


def load_lut(spec) -> Optional[errmodel.ErrorLut]:
    if spec in (None, "", "none"):
        return None
    if spec == "default":
        return experiments.default_lut()
    if spec.startswith("zero"):
        # "zero" or "zero:C"
        return errmodel.ErrorLut.zeros(int(spec.split(":")[1]) if ":" in spec else experiments.DEFAULT_SHAPE.C)
    return errmodel.ErrorLut.load(_existing(spec))


def load_power(spec) -> PowerModel:
    return default_calibration() if spec in (None, "", "default") else PowerModel.load(_existing(spec))


def load_operating_point(spec) -> experiments.OperatingPoint:
    if spec in (None, "", "default"):
        return experiments.default_operating_point()
    return experiments.OperatingPoint.from_json(json.loads(_existing(spec).read_text()))


def load_model(spec) -> nn.NetworkModel:
    return nn.load_desk_model() if spec in (None, "", "default") else nn.load_network(_existing(spec))


def load_dataset(spec, default_split: str) -> nn.Dataset:
    if spec in (None, "", "default"):
        return nn.load_desk_dataset(default_split)
    return nn.load_dataset(_existing(spec))


def load_int_matrix(path, bits, signed) -> IntMatrix:
    p = _existing(path)
    if p.suffix == ".csv":
        if bits is None:
            raise ConfigError(f"{p}: CSV operands need --a-bits/--b-bits")
        return tensorio.matrix_from_csv(p, bits, signed)
    return tensorio.read_matrix(p)


# -- subcommands -------------------------------------------------------------------------


@command(
    "gemm", "Run an exact or GAV GEMM P = B @ A from tensor files.",
    a=(None, str, "activation matrix [C_total, L_total] (GVT1 or CSV)"),
    b=(None, str, "weight matrix [K_total, C_total] (GVT1 or CSV)"),
    a_bits=(None, int, "bits of A when read from CSV"),
    b_bits=(None, int, "bits of B when read from CSV"),
    a_signed=(True, bool, "A is signed (CSV only)"),
    shape=("32,8,8", str, "array shape C,L,K"),
    G=(None, int, "protection level; omitted means fully guarded"),
    lut=("default", str, "error model: default, zero, none or a LUT file"),
    oracle=(False, bool, "inject errors with the gate-level oracle instead of the LUT"),
    operating_point=("default", str, "oracle operating point file"),
    seed=(0, int, "sampling seed"),
    out=(None, str, "write P as GVT1 here"),
)
def cmd_gemm(cfg):
    _require(cfg, "a", "b")
    A = load_int_matrix(cfg["a"], cfg["a_bits"], cfg["a_signed"])
    B = load_int_matrix(cfg["b"], cfg["b_bits"], True)
    shape = parse_shape(cfg["shape"])
    sched = GavSchedule.fully_guarded(A.bits, B.bits) if cfg["G"] is None else GavSchedule(A.bits, B.bits, cfg["G"])
    exact_job = GemmJob(A, B, shape, sched)
    exact = gemm_exact(exact_job)
    res = exact
    if sched.approx_fraction() > 0:
        src = load_operating_point(cfg["operating_point"]).injector() if cfg["oracle"] else load_lut(cfg["lut"])
        res = gemm_gav(GemmJob(A, B, shape, sched, src, seed=cfg["seed"]))
    summary = {"shape": [shape.C, shape.L, shape.K], "precision": str(Precision(A.bits, B.bits)), "G": sched.G,
               "f": sched.approx_fraction(), **res.stats()}
    if sched.approx_fraction() > 0 and np.any(exact.P.data):
        summary["VAR_NED"] = var_ned(exact.P, res.P).var_ned
    if cfg["out"]:
        out = Path(cfg["out"])
        tensorio.write_matrix(out, res.P)
        write_snapshot(out, "gemm", cfg)
    print(json.dumps(summary, sort_keys=True))


@command(
    "oracle-trace", "Simulate the gate-level iPE and record (exact, prev, sampled) traces.",
    c=(32, int, "iPE length C"),
    jitter_sigma=(0.15, float, "static per-gate delay jitter"),
    timing_seed=(2, int, "seed of the gate-delay jitter"),
    delay_scale=(None, float, "undervolting delay scale; omitted uses the bundled operating point (C=32) or tunes"),
    tune=(False, bool, "tune the delay scale so the mean bit-error rate lands in [0.5%, 5%]"),
    target_ber=(None, float, "tune towards this mean bit-error rate (band +-25%) instead"),
    inputs=("density", str, "input generator: density, uniform or gemm"),
    precision=("a8w8", str, "operand precision for --inputs gemm"),
    cycles=(100_000, int, "number of cycles (density/uniform)"),
    seed=(0, int, "input seed"),
    out=(None, str, "trace file (GVTR)"),
)
def cmd_oracle_trace(cfg):
    _require(cfg, "out")
    C = cfg["c"]
    tune = cfg["tune"] or cfg["target_ber"] is not None
    band = (0.005, 0.05) if cfg["target_ber"] is None else (cfg["target_ber"] * 0.8, cfg["target_ber"] * 1.25)
    if cfg["delay_scale"] is None and not tune and C == 32:
        base = experiments.default_operating_point()
        op = experiments.OperatingPoint(C, cfg["jitter_sigma"], cfg["timing_seed"], base.delay_scale)
    else:
        op = experiments.OperatingPoint(C, cfg["jitter_sigma"], cfg["timing_seed"], cfg["delay_scale"] or 1.0)
    if cfg["inputs"] == "gemm":
        shape = ArrayShape(C, 8, 8)
        if tune:
            op, _ = experiments.tune_operating_point(op, cfg["precision"], cfg["seed"], shape=shape, band=band)
        trace = experiments.calibration_traces(op, [cfg["precision"]], [cfg["seed"]], shape=shape)[0]
    elif cfg["inputs"] in ("density", "uniform"):
        gen = oracle.density_pair_inputs() if cfg["inputs"] == "density" else oracle.uniform_inputs()
        if tune:
            rng = np.random.default_rng([cfg["seed"], 0x7ACE])
            a, b = gen(rng, min(cfg["cycles"], 20_000), C)
            ap, bp = np.zeros_like(a), np.zeros_like(b)
            ap[1:], bp[1:] = a[:-1], b[:-1]
            tuned, _ = oracle.tune_alpha(op.netlist(), op.timing(), ap, bp, a, b, band=band)
            op = experiments.OperatingPoint(C, op.jitter_sigma, op.timing_seed, tuned.delay_scale)
        trace = oracle.generate_traces(op.netlist(), op.timing(), gen, cfg["cycles"], seed=cfg["seed"])
    else:
        raise ConfigError(f"unknown input generator {cfg['inputs']!r}")
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    oracle.write_trace(out, trace)
    Path(str(out) + ".op.json").write_text(json.dumps(op.to_json(), indent=2))
    write_snapshot(out, "oracle-trace", cfg)
    print(json.dumps({"records": len(trace), "mean_ber": trace.mean_ber(),
                      "bit_error_rates": trace.bit_error_rates().tolist(), "delay_scale": op.delay_scale}))


@command(
    "calibrate", "Build a LUT error model from trace files, or rebuild the bundled recipe.",
    traces=(None, str, "comma-separated GVTR files; omitted runs the bundled calibration recipe"),
    n_nei=(errmodel.DEFAULT_N_NEI, int, "number of conditioning neighbour bits"),
    p_bins=(errmodel.DEFAULT_P_BINS, int, "previous-output bins"),
    lam=(errmodel.DEFAULT_LAMBDA, float, "Laplace smoothing"),
    seed=(0, int, "master seed of the bundled recipe"),
    op_out=(None, str, "where the recipe writes its operating point"),
    out=(None, str, "LUT file (JSON)"),
)
def cmd_calibrate(cfg):
    _require(cfg, "out")
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    if cfg["traces"]:
        traces = [oracle.read_trace(_existing(t.strip())) for t in cfg["traces"].split(",") if t.strip()]
        lut = errmodel.calibrate(traces, cfg["n_nei"], cfg["p_bins"], cfg["lam"])
        info = {"records": sum(len(t) for t in traces)}
    else:
        rep = experiments.build_error_model(cfg["seed"])
        lut = rep.lut
        info = {"records": rep.n_records, "delay_scale": rep.op.delay_scale, "tune_ber": rep.tune_ber}
        if cfg["op_out"]:
            Path(cfg["op_out"]).write_text(json.dumps(rep.op.to_json(), indent=2))
    lut.save(out)
    write_snapshot(out, "calibrate", cfg)
    print(json.dumps({"C": lut.C, "source_digest": lut.source_digest, **info}, sort_keys=True))


FIDELITY_COLUMNS = ("precision", "G", "f", "oracle_var_ned", "model_var_ned", "rel_gap")
MARGINAL_COLUMNS = ("bit", "trace_rate", "model_rate", "rel_gap")


@command(
    "validate-model", "Compare LUT-injected against oracle-injected errors.",
    lut=("default", str, "LUT file or 'default'"),
    operating_point=("default", str, "operating point file or 'default'"),
    traces=(None, str, "compare per-bit rates on these GVTR traces instead of GEMM VAR_NED"),
    precisions=("a4w4,a8w8", str, "precisions of the held-out GEMMs"),
    n_matrices=(3, int, "held-out operand pairs per precision"),
    n_samples=(5, int, "LUT sampling repetitions per GEMM"),
    seed=(1000, int, "master seed of the held-out operands"),
    out=(None, str, "CSV output"),
)
def cmd_validate_model(cfg):
    lut = load_lut(cfg["lut"])
    if lut is None:
        raise ConfigError("validate-model needs a LUT")
    h = config_hash(cfg)
    if cfg["traces"]:
        tr = oracle.ErrorTrace.concat([oracle.read_trace(_existing(t.strip())) for t in cfg["traces"].split(",")])
        sampled = errmodel.sample_errors(tr.exact, tr.prev, lut, np.random.default_rng(cfg["seed"]))
        model_rates = (((tr.exact ^ sampled)[:, None] >> np.arange(lut.s_bits)) & 1).mean(axis=0)
        rows = [{"bit": b, "trace_rate": float(t), "model_rate": float(m),
                 "rel_gap": (float(m) - float(t)) / float(t) if t > 0 else float("nan")}
                for b, (t, m) in enumerate(zip(tr.bit_error_rates(), model_rates))]
        emit(cfg, "validate-model", render_csv("marginals", MARGINAL_COLUMNS, rows, h))
        return
    op = load_operating_point(cfg["operating_point"])
    rows = experiments.fidelity(op, lut, [str(p) for p in parse_precisions(cfg["precisions"])], cfg["seed"],
                                n_matrices=cfg["n_matrices"], n_samples=cfg["n_samples"])
    emit(cfg, "validate-model", render_csv("fidelity", FIDELITY_COLUMNS, rows, h))
    gaps = [abs(r["rel_gap"]) for r in rows if not math.isnan(r["rel_gap"])]
    print(json.dumps({"rows": len(rows), "max_abs_rel_gap": max(gaps) if gaps else None}), file=sys.stderr)


def _sweep_one(args):
    prec, gs, lut_spec, power_spec, seed, n_seeds, shape, dims, kind = args
    return experiments.sweep([prec], gs, load_lut(lut_spec), load_power(power_spec), seed, n_seeds=n_seeds,
                             shape=shape, dims=dims, kind=kind)


@command(
    "sweep", "Precision x G grid of VAR_NED, power, throughput and efficiency.",
    precisions=("a2w2,a3w3,a4w4,a8w8", str, "comma-separated precisions"),
    G=("all", str, "G values, e.g. 0-7 or 0,2,4; 'all' is each precision's full range"),
    lut=("default", str, "error model: default, zero, none or a LUT file"),
    power=("default", str, "power calibration file or 'default'"),
    shape=("32,8,8", str, "array shape C,L,K for the error simulation"),
    dims=("576,16,16", str, "GEMM dims C_total,L_total,K_total"),
    kind=("char", str, "operands: char (near-uniform products), random or relu"),
    n_seeds=(4, int, "operand pairs per grid point"),
    seed=(0, int, "master seed"),
    workers=(1, int, "worker processes (one task per precision)"),
    out=(None, str, "CSV output"),
)
def cmd_sweep(cfg):
    precs = parse_precisions(cfg["precisions"])
    gs = None if cfg["G"] == "all" else parse_ints(cfg["G"], "G")
    shape, dims = parse_shape(cfg["shape"]), tuple(parse_ints(cfg["dims"], "dims"))
    tasks = [(str(p), gs, cfg["lut"], cfg["power"], cfg["seed"], cfg["n_seeds"], shape, dims, cfg["kind"]) for p in precs]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(cfg["workers"]) as ex:
            parts = list(ex.map(_sweep_one, tasks))
    else:
        parts = [_sweep_one(t) for t in tasks]
    rows = sorted((r for part in parts for r in part),
                  key=lambda r: (Precision.parse(r["precision"]).product, r["precision"], r["G"]))
    emit(cfg, "sweep", render_csv("sweep", experiments.SWEEP_COLUMNS, rows, config_hash(cfg)))


@command(
    "profile", "Per-layer output-MSE sensitivity to G on a calibration batch.",
    model=("default", str, "network manifest or 'default' (desk CNN)"),
    lut=("default", str, "error model"),
    calib=("default", str, "calibration dataset directory or 'default'"),
    n_calib=(128, int, "calibration images used"),
    g_candidates=("all", str, "G candidates, e.g. 0-7"),
    n_rep=(5, int, "seeded repetitions per (layer, G)"),
    shape=("32,8,8", str, "array shape C,L,K"),
    seed=(0, int, "master seed"),
    out=(None, str, "profiles JSON"),
)
def cmd_profile(cfg):
    model = load_model(cfg["model"])
    data = load_dataset(cfg["calib"], "calib")
    gs = None if cfg["g_candidates"] == "all" else parse_ints(cfg["g_candidates"], "g_candidates")
    profs = experiments.profile(model, load_lut(cfg["lut"]), data.images[: cfg["n_calib"]], gs, cfg["seed"],
                                n_rep=cfg["n_rep"], shape=parse_shape(cfg["shape"]))
    emit_json(cfg, "profile", {"format": "gavsim-profiles", "version": 1, "profiles": [p.to_json() for p in profs]})


def read_profiles(path) -> list:
    obj = json.loads(_existing(path).read_text())
    if obj.get("format") != "gavsim-profiles":
        raise ConfigError(f"{path}: not a gavsim profiles file")
    return [LayerProfile.from_json(p) for p in obj["profiles"]]


@command(
    "allocate", "Exact per-layer G allocation under a MAC-weighted average-G budget.",
    profiles=(None, str, "profiles JSON from 'profile'"),
    g_target=(None, str, "budget on the weighted average G (decimal or fraction)"),
    g_candidates=(None, str, "restrict G candidates, e.g. 0,2,4"),
    out=(None, str, "assignment JSON"),
)
def cmd_allocate(cfg):
    _require(cfg, "profiles", "g_target")
    profs = read_profiles(cfg["profiles"])
    gs = parse_ints(cfg["g_candidates"], "g_candidates") if cfg["g_candidates"] else None
    try:
        target = Fraction(str(cfg["g_target"]))
    except ValueError:
        raise ConfigError(f"--g-target: cannot parse {cfg['g_target']!r}") from None
    alloc = experiments.allocate(profs, target, gs)
    emit_json(cfg, "allocate", {"format": "gavsim-plan", "version": 1, "g_target": str(target), **alloc.to_json()})


INFER_COLUMNS = ("plan", "g_target", "assignment", "weighted_avg_G", "accuracy", "accuracy_drop_pp",
                 "energy_per_inference_j", "energy_saving")


@command(
    "infer", "Quantized inference with per-layer GAV schedules; reports accuracy and energy.",
    model=("default", str, "network manifest or 'default' (desk CNN)"),
    dataset=("default", str, "dataset directory or 'default' (digits test split)"),
    plan=(None, str, "assignment JSON from 'allocate'"),
    G=(None, int, "uniform G for every layer (instead of --plan)"),
    profiles=(None, str, "profiles JSON: allocate for each --g-targets value and tabulate"),
    g_targets=("4,4.5,5,5.5,6", str, "budgets used with --profiles"),
    lut=("default", str, "error model"),
    power=("default", str, "power calibration"),
    shape=("32,8,8", str, "array shape C,L,K"),
    seeds=("0-4", str, "sampling seeds; metrics are averaged"),
    out=(None, str, "CSV output"),
)
def cmd_infer(cfg):
    model = load_model(cfg["model"])
    data = load_dataset(cfg["dataset"], "test")
    lut, power, shape = load_lut(cfg["lut"]), load_power(cfg["power"]), parse_shape(cfg["shape"])
    seeds = parse_ints(cfg["seeds"], "seeds")
    if cfg["profiles"]:
        targets = [t.strip() for t in cfg["g_targets"].split(",") if t.strip()]
        rows = experiments.tradeoff(model, lut, power, data, read_profiles(cfg["profiles"]), targets, seeds, shape=shape)
    else:
        if cfg["plan"]:
            obj = json.loads(_existing(cfg["plan"]).read_text())
            plan = nn.GavPlan.from_assignment(model, obj["assignment"])
            label = "allocated"
        elif cfg["G"] is not None:
            plan = nn.GavPlan.uniform(model, cfg["G"])
            label = f"uniform-G{cfg['G']}"
        else:
            plan, label = nn.GavPlan.fully_guarded(model), "guarded"
        exact_acc = nn.accuracy(nn.reference_forward(model, data.images)[-1], data.labels)
        base = experiments.evaluate_plan(model, nn.GavPlan.fully_guarded(model), data, None, power, seeds[:1], shape=shape)
        ev = experiments.evaluate_plan(model, plan, data, lut if plan.has_approx() else None, power, seeds, shape=shape)
        rows = [{"plan": label, "g_target": None, "assignment": plan.G_values(), **ev,
                 "accuracy_drop_pp": 100 * (exact_acc - ev["accuracy"]),
                 "energy_saving": 1 - ev["energy_per_inference_j"] / base["energy_per_inference_j"]}]
    emit(cfg, "infer", render_csv("infer", INFER_COLUMNS, rows, config_hash(cfg)))


REPORT_COLUMNS = ("source", "plan", "g_target", "assignment", "energy_saving", "accuracy", "accuracy_drop_pp")


@command(
    "report", "Merge 'infer' CSVs and emit the Pareto table of (energy saving, accuracy).",
    inputs=(None, str, "comma-separated CSV files from 'infer'"),
    all_rows=(False, bool, "keep dominated rows (adds a 'pareto' column)"),
    out=(None, str, "CSV output"),
)
def cmd_report(cfg):
    _require(cfg, "inputs")
    rows = []
    for path in [p.strip() for p in cfg["inputs"].split(",") if p.strip()]:
        header, recs = read_csv(_existing(path))
        if not header.startswith("# gavsim-infer v"):
            raise ConfigError(f"{path}: expected an infer CSV, got {header!r}")
        for r in recs:
            rows.append({"source": Path(path).name, "plan": r["plan"], "g_target": r["g_target"] or None,
                         "assignment": json.loads(r["assignment"]), "energy_saving": float(r["energy_saving"]),
                         "accuracy": float(r["accuracy"]), "accuracy_drop_pp": float(r["accuracy_drop_pp"])})
    front = experiments.pareto(rows)
    if cfg["all_rows"]:
        ids = {id(r) for r in front}
        table = sorted(({**r, "pareto": id(r) in ids} for r in rows), key=lambda r: (r["energy_saving"], r["accuracy"]))
        cols = REPORT_COLUMNS + ("pareto",)
    else:
        table, cols = front, REPORT_COLUMNS
    emit(cfg, "report", render_csv("report", cols, table, config_hash(cfg)))


# -- entry point ------------------------------------------------------------------------------


def _error_record(exc: BaseException, code: int) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code})


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    cmd = COMMANDS[ns.command]
    try:
        cfg = resolve(cmd, ns)
        cmd.func(cfg)
    except GavError as e:
        print(_error_record(e, e.exit_code), file=sys.stderr)
        return e.exit_code
    except (FileNotFoundError, json.JSONDecodeError, ValueError, KeyError) as e:
        print(_error_record(e, 2), file=sys.stderr)
        return 2
    except (ArithmeticError, OverflowError) as e:
        print(_error_record(e, 4), file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
