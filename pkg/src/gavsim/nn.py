"""Uniform symmetric quantization and a small quantized-network executor.

Every conv2d/linear layer quantizes its input with its activation spec,
multiplies integer operands on the bit-serial engine (convolutions are lowered
with im2col) and dequantizes the integer accumulator with
``scale_act * scale_weight`` before adding the float bias. Element-wise layers
work on the dequantized values.

Network files: a JSON manifest lists the layers and points at a weight blob
made of concatenated GVT1 records holding fixed-point (Q16) float weights.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensorio
from .core import ArrayShape, GavSchedule, IntMatrix, Precision
from .engine import GemmJob, gemm_exact, gemm_gav
from .errors import ConfigError, ShapeError
from .seeding import subseed

FRAC_BITS = 16
DESK_SHAPE = ArrayShape(C=32, L=8, K=8)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantSpec:
    bits: int
    scale: float
    signed: bool = True

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"quantization scale must be positive, got {self.scale}")

    @property
    def qmin(self) -> int:
        return -((1 << (self.bits - 1)) - 1) if self.signed else 0

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1 if self.signed else (1 << self.bits) - 1

    @classmethod
    def fit(cls, x: np.ndarray, bits: int, signed: Optional[bool] = None) -> "QuantSpec":
        """Per-tensor scale from the max magnitude; unsigned when ``x >= 0``."""
        x = np.asarray(x, dtype=np.float64)
        if signed is None:
            signed = bool(np.any(x < 0))
        top = float(np.max(np.abs(x))) if x.size else 0.0
        levels = (1 << (bits - 1)) - 1 if signed else (1 << bits) - 1
        return cls(bits, top / levels if top > 0 else 1.0, signed)

    def to_json(self) -> dict:
        return {"bits": self.bits, "scale": self.scale, "signed": self.signed}

    @classmethod
    def from_json(cls, obj: dict) -> "QuantSpec":
        return cls(int(obj["bits"]), float(obj["scale"]), bool(obj["signed"]))


def quantize_array(x, spec: QuantSpec) -> np.ndarray:
    if not spec.scale > 0:
        raise ConfigError("nonpositive scale")
    q = round_half_away(np.asarray(x, dtype=np.float64) / spec.scale)
    return np.clip(q, spec.qmin, spec.qmax).astype(np.int64)


def quantize(x, spec: QuantSpec) -> IntMatrix:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError("quantize returns a matrix; use quantize_array for tensors")
    return IntMatrix(quantize_array(np.atleast_2d(arr), spec), bits=spec.bits, signed=spec.signed)


def dequantize(q, spec: QuantSpec) -> np.ndarray:
    return np.asarray(getattr(q, "data", q), dtype=np.float64) * spec.scale


# -- layers -------------------------------------------------------------------


@dataclass
class Conv2d:
    name: str
    weight: np.ndarray  # (out, in, kh, kw)
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    w_spec: Optional[QuantSpec] = None
    a_spec: Optional[QuantSpec] = None
    kind = "conv2d"

    @property
    def qweight(self) -> np.ndarray:
        return quantize_array(self.weight, self.w_spec)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.weight.shape[2:]
        return (h + 2 * self.padding - kh) // self.stride + 1, (w + 2 * self.padding - kw) // self.stride + 1


@dataclass
class Linear:
    name: str
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    w_spec: Optional[QuantSpec] = None
    a_spec: Optional[QuantSpec] = None
    kind = "linear"

    @property
    def qweight(self) -> np.ndarray:
        return quantize_array(self.weight, self.w_spec)


@dataclass
class Simple:
    """Parameter-free layer: relu, maxpool, avgpool, flatten or residual-add."""

    kind: str
    size: int = 2
    source: int = -1  # residual-add: index of the layer whose output is added
    name: str = ""


GEMM_KINDS = ("conv2d", "linear")
SIMPLE_KINDS = ("relu", "maxpool", "avgpool", "flatten", "residual-add")


@dataclass
class NetworkModel:
    layers: list
    input_shape: tuple
    n_classes: int
    meta: dict = field(default_factory=dict)

    def gemm_layers(self) -> list:
        return [(i, l) for i, l in enumerate(self.layers) if l.kind in GEMM_KINDS]

    def shapes(self) -> list:
        """Per-layer output shapes (without the batch axis)."""
        shp = tuple(self.input_shape)
        out = []
        for l in self.layers:
            if l.kind == "conv2d":
                if len(shp) != 3 or shp[0] != l.weight.shape[1]:
                    raise ShapeError(f"{l.name}: input {shp} does not match weight {l.weight.shape}")
                shp = (l.weight.shape[0], *l.out_hw(*shp[1:]))
            elif l.kind == "linear":
                if len(shp) != 1 or shp[0] != l.weight.shape[1]:
                    raise ShapeError(f"{l.name}: input {shp} does not match weight {l.weight.shape}")
                shp = (l.weight.shape[0],)
            elif l.kind in ("maxpool", "avgpool"):
                shp = (shp[0], shp[1] // l.size, shp[2] // l.size)
            elif l.kind == "flatten":
                shp = (int(np.prod(shp)),)
            elif l.kind == "residual-add":
                if out[l.source] != shp:
                    raise ShapeError(f"residual-add shapes differ: {out[l.source]} vs {shp}")
            out.append(shp)
        return out

    def layer_macs(self, idx: int) -> int:
        """Multiply-accumulates per input image."""
        shapes = self.shapes()
        l = self.layers[idx]
        if l.kind == "conv2d":
            _, ho, wo = shapes[idx]
            return int(np.prod(l.weight.shape)) * ho * wo
        if l.kind == "linear":
            return int(np.prod(l.weight.shape))
        return 0

    def precision(self) -> Precision:
        specs = {(l.a_spec.bits, l.w_spec.bits) for _, l in self.gemm_layers()}
        if len(specs) != 1:
            raise ConfigError(f"mixed precisions across layers: {sorted(specs)}")
        return Precision(*specs.pop())

    def with_precision(self, a_bits: int, w_bits: int, calibration_inputs) -> "NetworkModel":
        """Re-derive weight and activation specs at a new precision, using
        float activations of ``calibration_inputs`` for the activation scales."""
        acts = float_activations(self, calibration_inputs)
        layers = []
        for i, l in enumerate(self.layers):
            if l.kind in GEMM_KINDS:
                x_in = acts[i - 1] if i > 0 else np.asarray(calibration_inputs, dtype=np.float64)
                l = replace(l, w_spec=QuantSpec.fit(l.weight, w_bits, signed=True), a_spec=QuantSpec.fit(x_in, a_bits))
            layers.append(l)
        return NetworkModel(layers, self.input_shape, self.n_classes, dict(self.meta))


def layer_schedule(layer, G: int) -> GavSchedule:
    return GavSchedule(layer.a_spec.bits, layer.w_spec.bits, int(G))


@dataclass
class GavPlan:
    schedules: dict  # layer name -> GavSchedule

    @classmethod
    def uniform(cls, model: NetworkModel, G: int) -> "GavPlan":
        return cls({l.name: layer_schedule(l, G) for _, l in model.gemm_layers()})

    @classmethod
    def fully_guarded(cls, model: NetworkModel) -> "GavPlan":
        return cls({l.name: GavSchedule.fully_guarded(l.a_spec.bits, l.w_spec.bits) for _, l in model.gemm_layers()})

    @classmethod
    def from_assignment(cls, model: NetworkModel, assignment: dict) -> "GavPlan":
        names = {l.name for _, l in model.gemm_layers()}
        if set(assignment) != names:
            raise ConfigError(f"assignment covers {sorted(assignment)}, network has {sorted(names)}")
        return cls({l.name: layer_schedule(l, assignment[l.name]) for _, l in model.gemm_layers()})

    def G_values(self) -> dict:
        return {k: s.G for k, s in self.schedules.items()}

    def has_approx(self) -> bool:
        return any(s.approx_fraction() > 0 for s in self.schedules.values())


# -- lowering -------------------------------------------------------------------


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """``(N, C, H, W)`` -> ``(C*kh*kw, N*Ho*Wo)``, rows ordered (channel, ky, kx)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]  # N, C, Ho, Wo, kh, kw
    n, c, ho, wo = win.shape[:4]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)


def lower_to_gemm(layer, x_q: np.ndarray):
    """Integer GEMM operands for a conv2d/linear layer.

    Returns ``(A, B, restore)`` where ``A`` is ``[C_total, L_total]``, ``B`` is
    ``[K_total, C_total]`` and ``restore`` maps the ``[K, L]`` product back to
    the layer's output layout.
    """
    a_spec, w_spec = layer.a_spec, layer.w_spec
    w = layer.qweight
    if layer.kind == "conv2d":
        if x_q.ndim != 4 or x_q.shape[1] != w.shape[1]:
            raise ShapeError(f"{layer.name}: input {x_q.shape} incompatible with weight {w.shape}")
        n = x_q.shape[0]
        ho, wo = layer.out_hw(*x_q.shape[2:])
        cols = im2col(x_q, w.shape[2], w.shape[3], layer.stride, layer.padding)
        A = IntMatrix(cols, bits=a_spec.bits, signed=a_spec.signed)
        B = IntMatrix(w.reshape(w.shape[0], -1), bits=w_spec.bits, signed=True)

        def restore(P):
            return P.reshape(w.shape[0], n, ho, wo).transpose(1, 0, 2, 3)

        return A, B, restore
    if layer.kind == "linear":
        if x_q.ndim != 2 or x_q.shape[1] != w.shape[1]:
            raise ShapeError(f"{layer.name}: input {x_q.shape} incompatible with weight {w.shape}")
        A = IntMatrix(x_q.T, bits=a_spec.bits, signed=a_spec.signed)
        B = IntMatrix(w, bits=w_spec.bits, signed=True)
        return A, B, lambda P: P.T
    raise ConfigError(f"layer kind {layer.kind} has no GEMM")


def _simple(layer: Simple, x: np.ndarray, outputs: list) -> np.ndarray:
    k = layer.kind
    if k == "relu":
        return np.maximum(x, 0.0)
    if k in ("maxpool", "avgpool"):
        s = layer.size
        n, c, h, w = x.shape
        v = x[:, :, : h // s * s, : w // s * s].reshape(n, c, h // s, s, w // s, s)
        return v.max(axis=(3, 5)) if k == "maxpool" else v.mean(axis=(3, 5))
    if k == "flatten":
        return x.reshape(x.shape[0], -1)
    if k == "residual-add":
        return x + outputs[layer.source]
    raise ConfigError(f"unknown layer kind {k}")


# -- execution --------------------------------------------------------------------


@dataclass
class InferenceResult:
    logits: np.ndarray
    layer_stats: list
    energy_j: float = 0.0

    @property
    def cycles(self) -> int:
        return sum(s["cycles"] for s in self.layer_stats)


class Runner:
    """Engine-backed forward pass with per-layer GAV schedules."""

    def __init__(self, model: NetworkModel, shape: Optional[ArrayShape] = None, lut=None, power=None,
                 batch_size: int = 64):
        self.model = model
        self.shape = shape or DESK_SHAPE
        self.lut = lut
        self.power = power
        self.batch_size = batch_size
        model.shapes()

    def _gemm(self, li, layer, x, schedule, seed, stream):
        x_q = quantize_array(x, layer.a_spec)
        outs, stats = [], {"cycles": 0, "approx_cycles": 0, "tiles": 0, "energy_j": 0.0}
        approx = schedule is not None and schedule.approx_fraction() > 0
        if approx and self.lut is None:
            raise ConfigError(f"layer {layer.name} has approximate passes but no error model was given")
        sched = schedule or GavSchedule.fully_guarded(layer.a_spec.bits, layer.w_spec.bits)
        for ci, lo in enumerate(range(0, x_q.shape[0], self.batch_size)):
            A, B, restore = lower_to_gemm(layer, x_q[lo: lo + self.batch_size])
            job = GemmJob(A, B, self.shape, sched, self.lut if approx else None, seed=subseed(seed, *stream, li, ci))
            res = gemm_gav(job) if approx else gemm_exact(job)
            outs.append(restore(res.P.data))
            for k, v in res.stats().items():
                stats[k] += v
        acc = np.concatenate(outs, axis=0)
        if self.power is not None:
            stats["energy_j"] = self.power.energy_joules(Precision(sched.a_bits, sched.b_bits), sched, stats["cycles"])
        y = acc.astype(np.float64) * (layer.a_spec.scale * layer.w_spec.scale)
        bias = layer.bias.reshape((1, -1) + (1,) * (y.ndim - 2))
        return y + bias, stats

    def run_from(self, start: int, x, schedules: dict, seed: int = 0, stream=("infer",), collect=None):
        """Run layers ``start..`` on ``x`` (the input of layer ``start``)."""
        outputs = list(collect) if collect is not None else [None] * start
        stats = []
        x = np.asarray(x, dtype=np.float64)
        for i in range(start, len(self.model.layers)):
            layer = self.model.layers[i]
            if layer.kind in GEMM_KINDS:
                x, st = self._gemm(i, layer, x, schedules.get(layer.name), seed, stream)
                stats.append({"layer": layer.name, **st})
            else:
                x = _simple(layer, x, outputs)
            outputs.append(x)
        self._last_outputs, self._last_stats = outputs, stats
        return x

    def exact_activations(self, x) -> list:
        """Input of every layer followed by the final output: ``acts[i]`` feeds layer ``i``."""
        self.run_from(0, x, {})
        return [np.asarray(x, dtype=np.float64)] + self._last_outputs

    def infer(self, plan: GavPlan, x, seed: int = 0) -> InferenceResult:
        logits = self.run_from(0, x, plan.schedules, seed=seed)
        stats = self._last_stats
        return InferenceResult(logits, stats, sum(s["energy_j"] for s in stats))


def infer(model: NetworkModel, plan: GavPlan, inputs, lut=None, seed: int = 0, *, shape=None, power=None,
          batch_size: int = 64) -> InferenceResult:
    return Runner(model, shape=shape, lut=lut, power=power, batch_size=batch_size).infer(plan, inputs, seed)


# -- reference executors ------------------------------------------------------------


def _direct_conv_int(x_q: np.ndarray, w_q: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Integer convolution as a sum of shifted 1x1 products."""
    if padding:
        x_q = np.pad(x_q, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, c, h, w = x_q.shape
    co, _, kh, kw = w_q.shape
    ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
    out = np.zeros((n, co, ho, wo), dtype=np.int64)
    for dy in range(kh):
        for dx in range(kw):
            patch = x_q[:, :, dy: dy + stride * (ho - 1) + 1: stride, dx: dx + stride * (wo - 1) + 1: stride]
            out += np.einsum("oc,nchw->nohw", w_q[:, :, dy, dx], patch)
    return out


def reference_forward(model: NetworkModel, x) -> list:
    """Quantized forward pass without the bit-serial engine; returns every layer output."""
    outputs = []
    x = np.asarray(x, dtype=np.float64)
    for layer in model.layers:
        if layer.kind == "conv2d":
            acc = _direct_conv_int(quantize_array(x, layer.a_spec), layer.qweight, layer.stride, layer.padding)
            x = acc * (layer.a_spec.scale * layer.w_spec.scale) + layer.bias[None, :, None, None]
        elif layer.kind == "linear":
            acc = quantize_array(x, layer.a_spec) @ layer.qweight.T
            x = acc * (layer.a_spec.scale * layer.w_spec.scale) + layer.bias[None, :]
        else:
            x = _simple(layer, x, outputs)
        outputs.append(x)
    return outputs


def float_activations(model: NetworkModel, x) -> list:
    """Unquantized forward pass; returns every layer output."""
    outputs = []
    x = np.asarray(x, dtype=np.float64)
    for layer in model.layers:
        if layer.kind == "conv2d":
            cols = im2col(x, *layer.weight.shape[2:], layer.stride, layer.padding)
            n = x.shape[0]
            ho, wo = layer.out_hw(*x.shape[2:])
            y = (layer.weight.reshape(layer.weight.shape[0], -1) @ cols).reshape(-1, n, ho, wo).transpose(1, 0, 2, 3)
            x = y + layer.bias[None, :, None, None]
        elif layer.kind == "linear":
            x = x @ layer.weight.T + layer.bias[None, :]
        else:
            x = _simple(layer, x, outputs)
        outputs.append(x)
    return outputs


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


# -- persistence ------------------------------------------------------------------


def _to_fixed(a: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(a, dtype=np.float64) * (1 << FRAC_BITS)).astype(np.int64)


def save_network(model: NetworkModel, manifest_path, blob_name: str = "weights.gvt") -> None:
    manifest_path = Path(manifest_path)
    blob = bytearray()
    entries = []

    def put(arr):
        off = len(blob)
        blob.extend(tensorio.encode(_to_fixed(arr), bits=32, signed=True))
        return {"offset": off, "shape": list(arr.shape)}

    for l in model.layers:
        if l.kind in GEMM_KINDS:
            e = {"kind": l.kind, "name": l.name, "weight": put(l.weight), "bias": put(l.bias),
                 "w_spec": l.w_spec.to_json(), "a_spec": l.a_spec.to_json()}
            if l.kind == "conv2d":
                e.update(stride=l.stride, padding=l.padding)
        else:
            e = {"kind": l.kind, "name": l.name}
            if l.kind in ("maxpool", "avgpool"):
                e["size"] = l.size
            if l.kind == "residual-add":
                e["source"] = l.source
        entries.append(e)
    (manifest_path.parent / blob_name).write_bytes(bytes(blob))
    manifest = {
        "format": "gavsim-net",
        "version": 1,
        "input_shape": list(model.input_shape),
        "n_classes": model.n_classes,
        "weight_blob": blob_name,
        "fixed_point_frac_bits": FRAC_BITS,
        "layers": entries,
        "meta": model.meta,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2))


def load_network(manifest_path) -> NetworkModel:
    manifest_path = Path(manifest_path)
    m = json.loads(manifest_path.read_text())
    if m.get("format") != "gavsim-net" or m.get("version") != 1:
        raise ConfigError(f"{manifest_path}: not a version-1 gavsim network manifest")
    blob = (manifest_path.parent / m["weight_blob"]).read_bytes()
    frac = m.get("fixed_point_frac_bits", FRAC_BITS)

    def get(ref):
        t, _ = tensorio.decode(blob, ref["offset"])
        if list(t.data.shape) != ref["shape"]:
            raise ConfigError(f"weight record at {ref['offset']} has shape {t.data.shape}, manifest says {ref['shape']}")
        return t.data.astype(np.float64) / (1 << frac)

    layers = []
    for e in m["layers"]:
        k = e["kind"]
        if k == "conv2d":
            layers.append(Conv2d(e["name"], get(e["weight"]), get(e["bias"]), e.get("stride", 1), e.get("padding", 0),
                                 QuantSpec.from_json(e["w_spec"]), QuantSpec.from_json(e["a_spec"])))
        elif k == "linear":
            layers.append(Linear(e["name"], get(e["weight"]), get(e["bias"]),
                                 QuantSpec.from_json(e["w_spec"]), QuantSpec.from_json(e["a_spec"])))
        elif k in SIMPLE_KINDS:
            layers.append(Simple(k, size=e.get("size", 2), source=e.get("source", -1), name=e.get("name", "")))
        else:
            raise ConfigError(f"unknown layer kind {k!r}")
    model = NetworkModel(layers, tuple(m["input_shape"]), int(m["n_classes"]), m.get("meta", {}))
    model.shapes()
    return model


@dataclass
class Dataset:
    images: np.ndarray  # float, (N, C, H, W)
    labels: np.ndarray
    raw: np.ndarray  # integers as stored

    def split(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.raw[idx])


def load_dataset(directory, input_scale: Optional[float] = None) -> Dataset:
    """Images from ``images.gvt`` scaled by ``input_scale`` (or the value in
    ``dataset.json``), labels from ``labels.csv``."""
    d = Path(directory)
    t = tensorio.read_tensor(d / "images.gvt")
    meta_path = d / "dataset.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    scale = input_scale if input_scale is not None else meta.get("input_scale", 1.0)
    with open(d / "labels.csv", newline="") as fh:
        rows = [r for r in csv.DictReader(fh)]
    labels = np.array([int(r["label"]) for r in sorted(rows, key=lambda r: int(r["index"]))], dtype=np.int64)
    if labels.shape[0] != t.data.shape[0]:
        raise ConfigError(f"{d}: {t.data.shape[0]} images but {labels.shape[0]} labels")
    return Dataset(t.data.astype(np.float64) * scale, labels, t.data)


def save_dataset(directory, raw_images: np.ndarray, labels: np.ndarray, bits: int, input_scale: float,
                 meta: Optional[dict] = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(d / "images.gvt", raw_images, bits=bits, signed=False)
    with open(d / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label"])
        for i, lab in enumerate(labels):
            w.writerow([i, int(lab)])
    (d / "dataset.json").write_text(json.dumps({"input_scale": input_scale, **(meta or {})}, indent=2))


DATA_DIR = Path(__file__).parent / "data"


def load_desk_model() -> NetworkModel:
    return load_network(DATA_DIR / "desk_cnn" / "manifest.json")


def load_desk_dataset(split: str = "test") -> Dataset:
    return load_dataset(DATA_DIR / "digits" / split)
