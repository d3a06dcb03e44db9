"""Stage 2 workload- and resource-aware throughput predictor.

Inside this module the GPU ceiling is carried in tokens per iteration
(``t_gpu_iter = T_GPU * delta``) because the GPU-bound test compares it with
per-iteration token counts.  Reported throughputs count generated tokens.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import HardwareProfile, InfeasibleWorkloadError, KVCacheConfig, ModelConfig
from .stage1 import t_gpu as stage1_t_gpu
from .stage1 import weight_transfer_time


class Regime(str, enum.Enum):
    MEMORY_BOUND = "MemoryBound"
    GPU_BOUND = "GpuBound"


class NotGpuBoundError(ValueError):
    """The GPU-bound formula's preconditions do not hold."""


@dataclass(frozen=True)
class Stage2Report:
    q: float
    t1: float
    t2: float | None
    predicted_throughput: float
    iterations: float | None
    regime: Regime
    predicted_utilization: float
    t_gpu: float
    delta: float

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["regime"] = self.regime.value
        return d


def lifetime_blocks(p: int, g: int, b: int) -> int:
    """Sum over the g+1 occupancy snapshots of the blocks one sequence holds."""
    return int(kernels.lifetime_block_sum(int(p), int(g), int(b)))


def prefill_rate(kv: KVCacheConfig, p: int, g: int) -> float:
    """Sequences admitted per iteration so the block pool stays exactly full."""
    if p < 1 or g < 1:
        raise ValueError("p and g must be >= 1")
    n = kv.num_blocks
    if math.ceil((p + g) / kv.block_size) > n:
        raise InfeasibleWorkloadError(
            f"workload infeasible: a sequence of {p + g} tokens needs more than {n} blocks"
        )
    return n / lifetime_blocks(p, g, kv.block_size)


def t1_memory_bound(K: float, g: float, q: float, delta: float) -> float:
    """Generation throughput when KV capacity limits the decode set."""
    return K * g / ((K / q + g) * delta)


def t1_memory_bound_factored(K: float, g: float, q: float, delta: float) -> float:
    """Same value written as (epilogue slowdown) * (ideal decode rate)."""
    return K / (K + g * q) * (g * q / delta)


def is_gpu_bound(t_gpu_iter: float, q: float, p: float, g: float) -> bool:
    return t_gpu_iter < q * (p + g)


def t2_gpu_bound(
    K: float,
    p: float,
    g: float,
    t_gpu_iter: float,
    delta: float,
    q: float | None = None,
) -> tuple[float, float]:
    """(T2, iteration count) when GPU compute limits the pipeline.

    Raises NotGpuBoundError when the regime test fails (if ``q`` is given)
    or the batch is too small to fill the prologue.
    """
    if g < 1 or p < 1:
        raise NotGpuBoundError("not GPU-bound; T2 not applicable (p, g must be >= 1)")
    if q is not None and not is_gpu_bound(t_gpu_iter, q, p, g):
        raise NotGpuBoundError("not GPU-bound; T2 not applicable")
    t_prefill = t_gpu_iter * p / (p + g)
    prologue_tokens = (t_prefill + t_gpu_iter) / 2 * g
    if K * p <= prologue_tokens:
        raise NotGpuBoundError("not GPU-bound; T2 not applicable (batch ends inside the prologue)")
    iterations = 2 * g + (K * p - prologue_tokens) / t_prefill
    return K * g / (iterations * delta), iterations


def t2_truncated_prologue(
    K: float, p: float, g: float, t_gpu_iter: float, delta: float
) -> tuple[float, float]:
    """(T2, iteration count) when the batch is exhausted inside the prologue.

    The prologue's prefill rate falls linearly from ``t_gpu_iter`` to the
    steady prefill rate over g iterations.  If all ``K * p`` prompt tokens
    are consumed after ``j <= g`` iterations, the run lasts ``j + g``
    iterations.  At ``j = g`` this equals the full GPU-bound formula.
    """
    t_prefill = t_gpu_iter * p / (p + g)
    a = (t_gpu_iter - t_prefill) / (2 * g)
    need = K * p
    disc = max(t_gpu_iter * t_gpu_iter - 4 * a * need, 0.0)
    j = need / t_gpu_iter if a == 0 else (t_gpu_iter - math.sqrt(disc)) / (2 * a)
    j = min(j, g)
    iterations = j + g
    return K * g / (iterations * delta), iterations


def predict(
    hw: HardwareProfile,
    model: ModelConfig,
    kv: KVCacheConfig,
    p: float,
    g: float,
    K: float,
    t_gpu: float | None = None,
) -> Stage2Report:
    """Predicted generation throughput for K sequences of mean lengths (p, g).

    The result is also capped at the GPU ceiling ``T_GPU * g / (p + g)``:
    the GPU-bound formula can exceed it for small ``p / g`` ratios.  A
    GPU-bound batch too small to fill the prologue uses
    ``t2_truncated_prologue``.
    """
    p_int, g_int = int(round(p)), int(round(g))
    q = prefill_rate(kv, p_int, g_int)
    delta = weight_transfer_time(hw, model)
    tg = stage1_t_gpu(hw, model) if t_gpu is None else t_gpu
    t_gpu_iter = tg * delta

    t1 = t1_memory_bound(K, g, q, delta)
    t2 = iterations = None
    if is_gpu_bound(t_gpu_iter, q, p, g):
        try:
            t2, iterations = t2_gpu_bound(K, p, g, t_gpu_iter, delta)
        except NotGpuBoundError:
            # the batch ends inside the prologue; the ramp is cut short
            t2, iterations = t2_truncated_prologue(K, p, g, t_gpu_iter, delta)
    ceiling = tg * g / (p + g)
    candidates = [t1, ceiling] + ([t2] if t2 is not None else [])
    t = min(candidates)
    regime = Regime.MEMORY_BOUND if t == t1 and t1 < ceiling else Regime.GPU_BOUND
    util = t * (p + g) / g / tg
    return Stage2Report(
        q=q,
        t1=t1,
        t2=t2,
        predicted_throughput=t,
        iterations=iterations,
        regime=regime,
        predicted_utilization=min(util, 1.0),
        t_gpu=tg,
        delta=delta,
    )


def utilization_vs_capacity(
    hw: HardwareProfile,
    model: ModelConfig,
    p: int,
    g: int,
    K: float,
    b: int,
    capacities,
    t_gpu: float | None = None,
) -> np.ndarray:
    """Predicted utilization at each KV capacity (tokens); NaN where infeasible."""
    out = np.full(len(capacities), np.nan)
    for i, cap in enumerate(capacities):
        cap = int(cap)
        if cap < b or math.ceil((p + g) / b) > cap // b:
            continue
        out[i] = predict(hw, model, KVCacheConfig(cap, b), p, g, K, t_gpu).predicted_utilization
    return out


def capacity_to_reach(capacities, curve, threshold: float) -> float:
    """First capacity where ``curve`` reaches ``threshold``, linearly interpolated.

    Returns inf if the curve never gets there.
    """
    caps = np.asarray(capacities, dtype=float)
    vals = np.asarray(curve, dtype=float)
    hits = np.nonzero(vals >= threshold)[0]
    if hits.size == 0:
        return math.inf
    i = int(hits[0])
    if i == 0 or np.isnan(vals[i - 1]):
        return float(caps[i])
    v0, v1 = vals[i - 1], vals[i]
    return float(caps[i - 1] + (threshold - v0) / (v1 - v0) * (caps[i] - caps[i - 1]))
