"""Per-layer protection-level allocation.

Choose one ``G`` per layer to minimise the summed output MSE subject to
``sum_l ops_l * G_l <= G_target * sum_l ops_l``. This is a multiple-choice
knapsack; it is solved exactly by best-first branch and bound with the
budget kept in rational arithmetic.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.optimize import isotonic_regression

from .errors import ConfigError, InfeasibleError


def nonincreasing_fit(values) -> np.ndarray:
    """Least-squares non-increasing fit (pool adjacent violators)."""
    return isotonic_regression(np.asarray(values, dtype=np.float64), increasing=False).x


@dataclass
class LayerProfile:
    layer: str
    ops: int
    mse_by_g: dict  # G -> cleaned MSE, non-increasing in G
    raw_mse_by_g: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ops <= 0:
            raise ConfigError(f"layer {self.layer}: ops must be positive")
        self.mse_by_g = {int(g): float(v) for g, v in self.mse_by_g.items()}

    @classmethod
    def from_measurements(cls, layer: str, ops: int, raw: dict) -> "LayerProfile":
        gs = sorted(int(g) for g in raw)
        fit = nonincreasing_fit([raw[g] for g in gs])
        return cls(layer, ops, dict(zip(gs, fit.tolist())), {g: float(raw[g]) for g in gs})

    def to_json(self) -> dict:
        return {
            "layer": self.layer,
            "ops": self.ops,
            "mse_by_g": {str(g): v for g, v in sorted(self.mse_by_g.items())},
            "raw_mse_by_g": {str(g): v for g, v in sorted(self.raw_mse_by_g.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LayerProfile":
        return cls(
            obj["layer"], int(obj["ops"]),
            {int(g): v for g, v in obj["mse_by_g"].items()},
            {int(g): v for g, v in obj.get("raw_mse_by_g", {}).items()},
        )


@dataclass
class AllocationProblem:
    profiles: list
    g_candidates: list
    g_target: Fraction

    def __post_init__(self):
        self.g_candidates = sorted(int(g) for g in self.g_candidates)
        if not self.g_candidates:
            raise ConfigError("no G candidates")
        if not isinstance(self.g_target, Fraction):
            self.g_target = Fraction(str(self.g_target)) if isinstance(self.g_target, float) else Fraction(self.g_target)
        for p in self.profiles:
            missing = [g for g in self.g_candidates if g not in p.mse_by_g]
            if missing:
                raise ConfigError(f"layer {p.layer} has no MSE for G={missing}")

    @property
    def total_ops(self) -> int:
        return sum(p.ops for p in self.profiles)

    def weighted_average(self, gs) -> Fraction:
        return Fraction(sum(p.ops * g for p, g in zip(self.profiles, gs)), self.total_ops)

    def feasible(self, gs) -> bool:
        return sum(p.ops * g for p, g in zip(self.profiles, gs)) <= self.g_target * self.total_ops

    def objective(self, gs) -> float:
        return math.fsum(p.mse_by_g[g] for p, g in zip(self.profiles, gs))


@dataclass
class Allocation:
    assignment: dict  # layer name -> G
    objective: float
    weighted_avg: Fraction
    nodes: int = 0

    def to_json(self) -> dict:
        return {
            "assignment": self.assignment,
            "objective": self.objective,
            "weighted_avg": str(self.weighted_avg),
            "weighted_avg_float": float(self.weighted_avg),
        }


def _tie_key(gs) -> tuple:
    # larger G on earlier layers wins among equal objectives
    return tuple(-g for g in gs)


def solve_allocation(p: AllocationProblem) -> Allocation:
    """Exact optimum; ties go to the assignment with lexicographically larger
    G on earlier layers."""
    n = len(p.profiles)
    if n == 0:
        return Allocation({}, 0.0, Fraction(0), 0)
    ops = [pr.ops for pr in p.profiles]
    cands = p.g_candidates
    gmin = cands[0]
    budget = p.g_target * p.total_ops
    # min_rest[j]: budget consumed if layers j.. all take the smallest candidate
    min_rest = [0] * (n + 1)
    for j in range(n - 1, -1, -1):
        min_rest[j] = min_rest[j + 1] + ops[j] * gmin
    if min_rest[0] > budget:
        raise InfeasibleError(
            f"G_target={p.g_target} is below the smallest candidate G={gmin}; no assignment fits the budget"
        )
    mse = [[pr.mse_by_g[g] for g in cands] for pr in p.profiles]

    def bound(depth, used, chosen):
        slack = budget - used - min_rest[depth]
        extra = []
        for i in range(depth, n):
            # layer i alone may use the slack on top of its minimum share
            allowed = [m for g, m in zip(cands, mse[i]) if ops[i] * (g - gmin) <= slack]
            extra.append(min(allowed))
        return math.fsum(chosen + extra)

    best_obj: Optional[float] = None
    best_key: Optional[tuple] = None
    best_gs = None
    heap = [(bound(0, 0, []), (), 0, 0, [])]
    nodes = 0
    while heap:
        b, key, depth, used, chosen = heapq.heappop(heap)
        if best_obj is not None and b > best_obj:
            break
        nodes += 1
        if depth == n:
            if best_obj is None or (b, key) < (best_obj, best_key):
                best_obj, best_key = b, key
                best_gs = [-k for k in key]
            continue
        for ci, g in enumerate(cands):
            u = used + ops[depth] * g
            if u + min_rest[depth + 1] > budget:
                break
            ch = chosen + [mse[depth][ci]]
            nb = bound(depth + 1, u, ch)
            if best_obj is not None and nb > best_obj:
                continue
            heapq.heappush(heap, (nb, key + (-g,), depth + 1, u, ch))
    assert best_gs is not None
    return Allocation(
        {pr.layer: g for pr, g in zip(p.profiles, best_gs)},
        best_obj,
        p.weighted_average(best_gs),
        nodes,
    )


def profile_layers(model, lut, g_candidates, calibration_batch, *, seed: int = 0, n_rep: int = 5, shape=None,
                   batch_size: int = 64) -> list:
    """Output-MSE sensitivity of every GEMM layer to each G.

    For layer ``l`` and protection level ``g`` only layer ``l`` runs under GAV;
    the MSE of the logits against exact quantized inference is averaged over
    the batch and ``n_rep`` seeded repetitions.
    """
    from . import nn

    x = np.asarray(calibration_batch)
    if x.shape[0] == 0:
        raise ConfigError("empty calibration batch")
    runner = nn.Runner(model, shape=shape, lut=lut, batch_size=batch_size)
    exact_acts = runner.exact_activations(x)
    ref = exact_acts[-1]
    profiles = []
    for li, layer in model.gemm_layers():
        raw = {}
        for g in g_candidates:
            vals = []
            for rep in range(n_rep):
                sched = nn.layer_schedule(layer, g)
                out = runner.run_from(li, exact_acts[li], {layer.name: sched}, seed=seed, stream=("profile", li, g, rep))
                vals.append(float(np.mean((out - ref) ** 2)))
            raw[int(g)] = float(np.mean(vals))
        profiles.append(LayerProfile.from_measurements(layer.name, model.layer_macs(li), raw))
    return profiles
