"""Gate-delay timing surrogate of one inner-product element (iPE).

The netlist is a layer of AND gates feeding a balanced binary tree of
ripple-carry adders built from XOR/majority cells. Every gate has a transport
delay expressed in integer ticks. Undervolting is modelled by stretching all
delays by ``delay_scale``; because the stretch is uniform this is the same as
sampling the unscaled waveforms at ``clock_period / delay_scale``.

Two simulators share the netlist:

* :func:`simulate_batch` evaluates whole waveforms tick by tick, vectorised
  over many independent cycles. It drives trace generation and GEMM injection.
* :func:`simulate_cycle` is a scalar event-driven simulator used as an
  independent check of the batch path.
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .core import s_bits
from .errors import ConfigError

TICKS_PER_UNIT = 8

AND2, XOR2, XOR3, MAJ3 = "and2", "xor2", "xor3", "maj3"
_ARITY = {AND2: 2, XOR2: 2, XOR3: 3, MAJ3: 3}


def _eval(kind: str, ins):
    if kind == AND2:
        return ins[0] & ins[1]
    if kind == XOR2:
        return ins[0] ^ ins[1]
    if kind == XOR3:
        return ins[0] ^ ins[1] ^ ins[2]
    x, y, z = ins
    return (x & y) | (x & z) | (y & z)


@dataclass(frozen=True)
class Gate:
    kind: str
    inputs: tuple[int, ...]
    out: int
    nominal_delay: float = 1.0


@dataclass
class IpeNetlist:
    """Nets ``0..C-1`` are the ``a`` inputs, ``C..2C-1`` the ``b`` inputs.

    ``gates`` is topologically ordered; ``outputs`` lists output nets LSB first.
    ``wiring[i]`` is the input pair feeding tree leaf ``i``.
    """

    C: int
    gates: list[Gate]
    outputs: list[int]
    n_nets: int
    wiring: np.ndarray

    @property
    def s_bits(self) -> int:
        return len(self.outputs)

    @property
    def depth(self) -> int:
        level = np.zeros(self.n_nets, dtype=np.int64)
        for g in self.gates:
            level[g.out] = 1 + max(level[i] for i in g.inputs)
        return int(max(level[o] for o in self.outputs))

    def evaluate(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Zero-delay evaluation; ``a``/``b`` are ``(N, C)`` bool arrays."""
        vals = _steady_values(self, np.asarray(a, bool), np.asarray(b, bool))
        return _pack(vals, self.outputs)


def _pack(vals, outputs) -> np.ndarray:
    out = np.zeros(vals[outputs[0]].shape, dtype=np.int64)
    for i, net in enumerate(outputs):
        out |= vals[net].astype(np.int64) << i
    return out


def build_ipe(C: int, seed: Optional[int] = None) -> IpeNetlist:
    """AND layer plus balanced adder tree for a ``C``-input iPE.

    ``seed`` permutes which input pair feeds which tree leaf; ``None`` keeps
    the identity wiring.
    """
    if C < 2:
        raise ConfigError(f"an iPE needs C >= 2, got {C}")
    gates: list[Gate] = []
    n_nets = 2 * C

    def new_gate(kind, ins):
        nonlocal n_nets
        gates.append(Gate(kind, tuple(ins), n_nets))
        n_nets += 1
        return n_nets - 1

    wiring = np.arange(C) if seed is None else np.random.default_rng(seed).permutation(C)
    # each tree node: (bit nets LSB first, maximum representable value)
    nodes = [([new_gate(AND2, (int(i), C + int(i)))], 1) for i in wiring]

    def add(x, y):
        (xb, xmax), (yb, ymax) = x, y
        width = (xmax + ymax).bit_length()
        bits, carry = [], None
        for i in range(max(len(xb), len(yb))):
            ins = [n for n in (xb[i] if i < len(xb) else None, yb[i] if i < len(yb) else None, carry) if n is not None]
            if len(ins) == 1:
                bits.append(ins[0])
                carry = None
            elif len(ins) == 2:
                bits.append(new_gate(XOR2, ins))
                carry = new_gate(AND2, ins) if len(bits) < width else None
            else:
                bits.append(new_gate(XOR3, ins))
                carry = new_gate(MAJ3, ins) if len(bits) < width else None
        if carry is not None:
            bits.append(carry)
        return bits[:width], xmax + ymax

    while len(nodes) > 1:
        nxt = [add(nodes[i], nodes[i + 1]) for i in range(0, len(nodes) - 1, 2)]
        if len(nodes) % 2:
            nxt.append(nodes[-1])
        nodes = nxt
    outputs = nodes[0][0]
    assert len(outputs) == s_bits(C)
    return IpeNetlist(C=C, gates=gates, outputs=outputs, n_nets=n_nets, wiring=wiring)


@dataclass(frozen=True)
class TimingConfig:
    """Operating point of the surrogate.

    ``clock_period`` is in nominal gate-delay units; ``None`` means "exactly the
    critical path", so ``delay_scale == 1`` is error-free. ``jitter_sigma`` adds
    a static Gaussian per-gate delay multiplier drawn from ``seed``.
    """

    clock_period: Optional[float] = None
    delay_scale: float = 1.0
    jitter_sigma: float = 0.0
    seed: int = 0
    ticks_per_unit: int = TICKS_PER_UNIT

    def __post_init__(self):
        if self.delay_scale < 1.0:
            raise ConfigError(f"delay_scale must be >= 1, got {self.delay_scale}")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma must be >= 0")


def gate_delays(net: IpeNetlist, cfg: TimingConfig) -> np.ndarray:
    """Integer tick delay of every gate under ``cfg``."""
    nominal = np.array([g.nominal_delay for g in net.gates])
    mult = np.ones_like(nominal)
    if cfg.jitter_sigma > 0:
        rng = np.random.default_rng([cfg.seed, 0x6A17])
        mult = np.clip(1.0 + cfg.jitter_sigma * rng.standard_normal(len(nominal)), 0.1, None)
    return np.maximum(1, np.rint(nominal * mult * cfg.ticks_per_unit)).astype(np.int64)


def critical_path_ticks(net: IpeNetlist, delays: np.ndarray) -> int:
    arrival = np.zeros(net.n_nets, dtype=np.int64)
    for g, d in zip(net.gates, delays):
        arrival[g.out] = d + max(arrival[i] for i in g.inputs)
    return int(max(arrival[o] for o in net.outputs))


def sample_tick(net: IpeNetlist, cfg: TimingConfig, delays: Optional[np.ndarray] = None) -> int:
    if delays is None:
        delays = gate_delays(net, cfg)
    period = critical_path_ticks(net, delays) if cfg.clock_period is None else cfg.clock_period * cfg.ticks_per_unit
    # small epsilon so an exact multiple is not lost to float rounding
    return int(math.floor(period / cfg.delay_scale + 1e-9))


def _steady_values(net: IpeNetlist, a: np.ndarray, b: np.ndarray) -> list:
    vals: list = [None] * net.n_nets
    for i in range(net.C):
        vals[i] = a[..., i]
        vals[net.C + i] = b[..., i]
    for g in net.gates:
        vals[g.out] = _eval(g.kind, [vals[i] for i in g.inputs])
    return vals


def _last_use(net: IpeNetlist) -> dict:
    last = {}
    for gi, g in enumerate(net.gates):
        for i in g.inputs:
            last[i] = gi
    return last


def simulate_batch(net: IpeNetlist, cfg: TimingConfig, a_prev, b_prev, a_new, b_new, chunk: int = 4096) -> np.ndarray:
    """Sampled outputs for N independent cycles (inputs are ``(N, C)`` bools).

    Each cycle starts from the steady state of the previous inputs; at t=0 the
    new inputs are applied and every gate output follows ``f(inputs(t - d))``.
    Outputs are read at the sampling tick.
    """
    a_prev, b_prev, a_new, b_new = (np.asarray(x, dtype=bool) for x in (a_prev, b_prev, a_new, b_new))
    n = a_new.shape[0]
    delays = gate_delays(net, cfg)
    ts = sample_tick(net, cfg, delays)
    out = np.empty(n, dtype=np.int64)
    last = _last_use(net)
    outputs = set(net.outputs)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        out[lo:hi] = _simulate_chunk(net, delays, ts, last, outputs,
                                     a_prev[lo:hi], b_prev[lo:hi], a_new[lo:hi], b_new[lo:hi])
    return out


def _simulate_chunk(net, delays, ts, last, outputs, a_prev, b_prev, a_new, b_new):
    steady = _steady_values(net, a_prev, b_prev)
    T = ts + 1  # ticks 0..ts inclusive
    waves: dict = {}
    for i in range(net.C):
        waves[i] = a_new[None, :, i]
        waves[net.C + i] = b_new[None, :, i]
    for gi, (g, d) in enumerate(zip(net.gates, delays)):
        w = np.empty((T, a_new.shape[0]), dtype=bool)
        k = min(int(d), T)
        w[:k] = steady[g.out]
        if k < T:
            ins = [waves[i] for i in g.inputs]
            span = T - k
            w[k:] = _eval(g.kind, [x if x.shape[0] == 1 else x[:span] for x in ins])
        waves[g.out] = w
        for i in g.inputs:
            if last.get(i) == gi and i not in outputs:
                del waves[i]
    res = np.zeros(a_new.shape[0], dtype=np.int64)
    for bit, o in enumerate(net.outputs):
        wave = waves[o]
        res |= wave[-1 if wave.shape[0] > 1 else 0].astype(np.int64) << bit
    return res


def value_at(initial: bool, transitions, t: float) -> bool:
    """Logic value at time ``t`` given ``(time, value)`` transitions; a
    transition exactly at ``t`` is visible."""
    v = initial
    for when, val in sorted(transitions, key=lambda x: x[0]):
        if when > t:
            break
        v = val
    return v


def simulate_cycle(net: IpeNetlist, cfg: TimingConfig, prev_inputs, new_inputs) -> int:
    """Event-driven simulation of one cycle; inputs are ``(a, b)`` vector pairs."""
    a0, b0 = (np.asarray(x, bool) for x in prev_inputs)
    a1, b1 = (np.asarray(x, bool) for x in new_inputs)
    delays = gate_delays(net, cfg)
    ts = sample_tick(net, cfg, delays)
    steady = _steady_values(net, a0, b0)
    vals = [bool(v) for v in steady]
    initial = list(vals)
    fanout: dict[int, list[int]] = {}
    for gi, g in enumerate(net.gates):
        for i in g.inputs:
            fanout.setdefault(i, []).append(gi)
    transitions: dict[int, list] = {}
    heap: list = []
    new = np.concatenate([a1, b1])
    for i in range(2 * net.C):
        if bool(new[i]) != vals[i]:
            heapq.heappush(heap, (0, i, bool(new[i])))
    while heap and heap[0][0] <= ts:
        t = heap[0][0]
        touched = set()
        while heap and heap[0][0] == t:
            _, n, v = heapq.heappop(heap)
            if vals[n] != v:
                vals[n] = v
                transitions.setdefault(n, []).append((t, v))
                touched.update(fanout.get(n, ()))
        for gi in sorted(touched):
            g = net.gates[gi]
            heapq.heappush(heap, (t + int(delays[gi]), g.out, bool(_eval(g.kind, [vals[i] for i in g.inputs]))))
    res = 0
    for bit, o in enumerate(net.outputs):
        res |= int(value_at(initial[o], transitions.get(o, []), ts)) << bit
    return res


# -- traces ------------------------------------------------------------------

InputGenerator = Callable[[np.random.Generator, int, int], tuple[np.ndarray, np.ndarray]]


def uniform_inputs(p: float = 0.5) -> InputGenerator:
    def gen(rng, n, C):
        return rng.random((n, C)) < p, rng.random((n, C)) < p
    return gen


def density_pair_inputs() -> InputGenerator:
    """Per-cycle densities whose product is uniform on (0, 1), so the popcount
    of ``a AND b`` is close to uniform over ``0..C``."""
    def gen(rng, n, C):
        t = rng.random(n)
        da = t + (1.0 - t) * rng.random(n)
        db = np.divide(t, da, out=np.zeros_like(t), where=da > 0)
        return rng.random((n, C)) < da[:, None], rng.random((n, C)) < db[:, None]
    return gen


@dataclass
class ErrorTrace:
    """Per-cycle (exact, previous exact, sampled) iPE outputs."""

    C: int
    exact: np.ndarray
    prev: np.ndarray
    sampled: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.exact = np.asarray(self.exact, dtype=np.int64)
        self.prev = np.asarray(self.prev, dtype=np.int64)
        self.sampled = np.asarray(self.sampled, dtype=np.int64)
        lim = 1 << s_bits(self.C)
        for name in ("exact", "prev", "sampled"):
            arr = getattr(self, name)
            if arr.size and (arr.min() < 0 or arr.max() >= lim):
                raise ConfigError(f"trace field {name} outside [0, {lim})")

    @property
    def s_bits(self) -> int:
        return s_bits(self.C)

    def __len__(self):
        return self.exact.shape[0]

    def error_bits(self) -> np.ndarray:
        """(n, S_BITS) bool matrix of flipped bits."""
        x = self.exact ^ self.sampled
        return ((x[:, None] >> np.arange(self.s_bits)) & 1).astype(bool)

    def bit_error_rates(self) -> np.ndarray:
        return self.error_bits().mean(axis=0)

    def mean_ber(self) -> float:
        return float(self.error_bits().mean())

    @classmethod
    def concat(cls, traces) -> "ErrorTrace":
        traces = list(traces)
        if len({t.C for t in traces}) != 1:
            raise ConfigError("traces disagree on C")
        return cls(traces[0].C, *(np.concatenate([getattr(t, f) for t in traces]) for f in ("exact", "prev", "sampled")))


TRACE_MAGIC = b"GVTR"


def write_trace(path, trace: ErrorTrace) -> None:
    head = struct.pack("<4s3I", TRACE_MAGIC, trace.C, trace.s_bits, len(trace))
    body = np.stack([trace.exact, trace.prev, trace.sampled], axis=1).astype("<u2").tobytes()
    Path(path).write_bytes(head + body)


def read_trace(path) -> ErrorTrace:
    buf = Path(path).read_bytes()
    magic, C, sb, n = struct.unpack_from("<4s3I", buf, 0)
    if magic != TRACE_MAGIC:
        raise ConfigError(f"{path}: bad trace magic {magic!r}")
    if sb != s_bits(C):
        raise ConfigError(f"{path}: S_BITS={sb} inconsistent with C={C}")
    body = np.frombuffer(buf, dtype="<u2", count=3 * n, offset=struct.calcsize("<4s3I")).reshape(n, 3)
    return ErrorTrace(C, body[:, 0], body[:, 1], body[:, 2])


def _sequence_inputs(a: np.ndarray, b: np.ndarray):
    a_prev = np.zeros_like(a)
    b_prev = np.zeros_like(b)
    a_prev[1:], b_prev[1:] = a[:-1], b[:-1]
    return a_prev, b_prev


def generate_traces(net: IpeNetlist, cfg: TimingConfig, input_generator: InputGenerator, n_cycles: int,
                    seed: Optional[int] = None) -> ErrorTrace:
    """Run ``n_cycles`` back-to-back cycles on one iPE and record the trace.

    Inputs are drawn from ``seed`` (default: the timing seed)."""
    if n_cycles < 1:
        raise ConfigError("n_cycles must be >= 1")
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 0x7ACE])
    a, b = input_generator(rng, n_cycles, net.C)
    a_prev, b_prev = _sequence_inputs(a, b)
    return trace_from_inputs(net, cfg, a_prev, b_prev, a, b)


def trace_from_inputs(net, cfg, a_prev, b_prev, a_new, b_new) -> ErrorTrace:
    exact = np.count_nonzero(a_new & b_new, axis=1)
    prev = np.count_nonzero(a_prev & b_prev, axis=1)
    sampled = simulate_batch(net, cfg, a_prev, b_prev, a_new, b_new)
    return ErrorTrace(net.C, exact, prev, sampled)


def tune_alpha(net, cfg, a_prev, b_prev, a_new, b_new, band=(0.005, 0.05), iters: int = 24):
    """Bisect ``delay_scale`` so the mean bit-error rate on the given cycles
    lands inside ``band`` (aiming at its geometric centre).

    Returns the tuned config and its measured mean BER.
    """
    lo_band, hi_band = band
    target = math.sqrt(lo_band * hi_band)

    def ber(alpha):
        s = simulate_batch(net, replace(cfg, delay_scale=alpha), a_prev, b_prev, a_new, b_new)
        exact = np.count_nonzero(np.asarray(a_new, bool) & np.asarray(b_new, bool), axis=1)
        x = exact ^ s
        return float(((x[:, None] >> np.arange(net.s_bits)) & 1).mean())

    lo, hi = 1.0, 1.25
    seen = {1.0: ber(1.0)}
    while (seen.setdefault(hi, ber(hi))) < target:
        lo, hi = hi, hi * 1.5
        if hi > 64:
            raise ConfigError("could not reach the target error rate")
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        seen[mid] = ber(mid)
        if seen[mid] < target:
            lo = mid
        else:
            hi = mid
    inside = {a: r for a, r in seen.items() if lo_band <= r <= hi_band}
    if not inside:
        raise ConfigError(f"no delay scale hits the band {band}; closest rates {sorted(seen.values())}")
    alpha = min(inside, key=lambda a: abs(math.log(inside[a] / target)))
    return replace(cfg, delay_scale=alpha), inside[alpha]


def approx_cycle_inputs(stream):
    """Per-iPE ``(a_prev, b_prev, a_new, b_new)`` bit vectors of every
    approximate cycle, ordered (cycle, k, l)."""
    idx = np.flatnonzero(stream.approx)
    K, L = stream.exact.shape[1:]
    C = stream.shape.C

    def per_ipe(a, b):
        A = np.broadcast_to(a[:, None, :, :], (len(idx), K, L, C))
        B = np.broadcast_to(b[:, :, None, :], (len(idx), K, L, C))
        return A.reshape(-1, C), B.reshape(-1, C)

    a1, b1 = stream.inputs(idx)
    a0, b0 = stream.inputs(idx - 1)
    return (*per_ipe(a0, b0), *per_ipe(a1, b1))


class OracleInjector:
    """Error source that re-simulates every approximate iPE cycle on the netlist."""

    def __init__(self, net: IpeNetlist, cfg: TimingConfig):
        self.net = net
        self.cfg = cfg

    def corrupt(self, stream, rng=None) -> np.ndarray:
        if stream.shape.C != self.net.C:
            raise ConfigError(f"netlist has C={self.net.C}, array has C={stream.shape.C}")
        n = int(np.count_nonzero(stream.approx))
        K, L = stream.exact.shape[1:]
        return simulate_batch(self.net, self.cfg, *approx_cycle_inputs(stream)).reshape(n, K, L)

    def traces(self, stream) -> ErrorTrace:
        """Trace records of the approximate cycles of ``stream``."""
        sampled = self.corrupt(stream)
        approx = stream.approx
        return ErrorTrace(self.net.C, stream.exact[approx].ravel(), stream.prev[approx].ravel(), sampled.ravel())
