"""Stage 1 theoretical throughput bound and CPU-side resource requirements.

Throughputs here count every token the GPU processes (prefill and decode),
so ``t_max`` and ``t_gpu`` share a unit and their ratio is the GPU
utilization ceiling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    HardwareProfile,
    InfeasibleWorkloadError,
    ModelConfig,
    flops_per_token,
    kv_bytes_per_token,
    model_bytes,
)

# FLOPs per byte of KV read: one dot product and one saxpby per element.
DEFAULT_I_CPU_ATTN = 2.0


@dataclass(frozen=True)
class SaturationTokens:
    exact: int
    approx: int

    @property
    def relative_gap(self) -> float:
        return abs(self.exact - self.approx) / self.exact


@dataclass(frozen=True)
class Stage1Report:
    intensity: float
    saturation_tokens: int
    saturation_tokens_approx: int
    delta: float
    pme: float
    t_max: float
    t_gpu: float
    utilization: float
    required_mem_bandwidth: float
    required_kv_bandwidth: float
    required_cpu_attn_flops: float
    effective_kv_capacity: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _per_h2(model: ModelConfig) -> tuple[float, float]:
    """Numerator and denominator of the intensity ratio, divided by h^2."""
    m, s = model.m, model.gqa_group
    shared = 4 + 4 / s
    return 6 * m * model.top_k + shared, 6 * m * model.num_experts + shared


def gemm_intensity(model: ModelConfig, n: float) -> float:
    """GEMM FLOPs per byte of BF16 weight traffic for ``n`` parallel tokens."""
    if n < 1:
        raise ValueError("n must be >= 1")
    num, den = _per_h2(model)
    return n * num / den


def gemm_intensity_approx(model: ModelConfig, n: float) -> float:
    """Sparsity-only approximation ``n * N_k / N_e``."""
    return n * model.top_k / model.num_experts


def saturation_tokens(hw: HardwareProfile, model: ModelConfig) -> SaturationTokens:
    """Smallest ``n`` whose GEMM intensity reaches ``gpu_flops / io_bandwidth``.

    The exact value inverts the full intensity ratio in closed form; the
    approximate value uses ``(C/B) * N_e / N_k``.
    """
    ridge = hw.gpu_flops / hw.io_bandwidth
    num, den = _per_h2(model)
    # the intensity ratio assumes 2-byte weights; rescale for other widths
    width = model.dtype_bytes / 2
    # guard against float noise pushing an exact integer up by one
    exact = math.ceil(ridge * width * den / num - 1e-9)
    approx = math.ceil(ridge * model.num_experts / model.top_k - 1e-9)
    return SaturationTokens(max(exact, 1), max(approx, 1))


def kv_bytes_to_saturate(tokens: float, seq_len: int, model: ModelConfig) -> float:
    """KV bytes for ``tokens`` concurrent sequences of ``seq_len`` tokens each."""
    return tokens * seq_len * kv_bytes_per_token(model)


def pme(p: float, g: float) -> float:
    """Parallel tokens per token-iteration of KV occupancy over a lifetime."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if g < 1:
        raise ValueError("g must be >= 1 (formula singular at g = 0)")
    return 2.0 * (p + g) / ((2 * p + g) * g)


def pme_exact(p: int, g: int) -> float:
    """Same ratio with the occupancy summed over g discrete steps."""
    return (p + g) / sum(p + j for j in range(g))


def weight_transfer_time(hw: HardwareProfile, model: ModelConfig) -> float:
    """delta: seconds to stream every weight over the link once."""
    return model_bytes(model) / hw.io_bandwidth


def t_gpu(hw: HardwareProfile, model: ModelConfig) -> float:
    """GPU token ceiling (tokens/s) from the GEMM FLOP count."""
    return hw.gpu_flops / flops_per_token(model)


def t_max(
    hw: HardwareProfile,
    model: ModelConfig,
    kv_capacity: float,
    p: float,
    g: float,
    t_gpu_value: float | None = None,
) -> tuple[float, float]:
    """Return (T_max, utilization) for a KV capacity given in tokens."""
    if kv_capacity < p + g:
        raise InfeasibleWorkloadError("workload infeasible: single sequence exceeds KV capacity")
    tg = t_gpu(hw, model) if t_gpu_value is None else t_gpu_value
    delta = weight_transfer_time(hw, model)
    bound = min(pme(p, g) * kv_capacity / delta, tg)
    return bound, bound / tg


def required_bandwidths(
    hw: HardwareProfile, model: ModelConfig, kv_capacity_bytes: float
) -> tuple[float, float]:
    """(B_Mem, B_KV): KV and weights are each read once per weight pass."""
    b_kv = kv_capacity_bytes / model_bytes(model) * hw.io_bandwidth
    return b_kv + hw.io_bandwidth, b_kv


def required_cpu_attn_throughput(
    model: ModelConfig, b_kv: float, i_cpu_attn: float = DEFAULT_I_CPU_ATTN
) -> float:
    """FLOP/s the CPU needs to attend over KV read at ``b_kv`` bytes/s."""
    if b_kv < 0:
        raise ValueError("b_kv must be >= 0")
    return 2.0 * model.gqa_group * i_cpu_attn * b_kv


def effective_kv_capacity(p: float, g: float, c_kv: float) -> float:
    """KV capacity as seen with overlapped prefill and decode."""
    if p < 1 or g < 0:
        raise ValueError("need p >= 1 and g >= 0")
    return (p + g) / (p + g / 2) * c_kv


def utilization_surface(
    hw: HardwareProfile,
    model: ModelConfig,
    kv_capacity: float,
    t_gpu_value: float | None,
    p_range,
    g_range,
) -> np.ndarray:
    """Grid of T_max / T_GPU indexed [i_p, i_g]; infeasible cells are NaN."""
    p_range, g_range = list(p_range), list(g_range)
    if not p_range or not g_range:
        raise ValueError("p_range and g_range must be non-empty")
    out = np.full((len(p_range), len(g_range)), np.nan)
    for i, p in enumerate(p_range):
        for j, g in enumerate(g_range):
            if kv_capacity >= p + g:
                out[i, j] = t_max(hw, model, kv_capacity, p, g, t_gpu_value)[1]
    return out


def stage1_report(
    hw: HardwareProfile,
    model: ModelConfig,
    kv_capacity: float,
    p: float,
    g: float,
    t_gpu_value: float | None = None,
    i_cpu_attn: float = DEFAULT_I_CPU_ATTN,
) -> Stage1Report:
    """Every Stage 1 quantity for one (hardware, model, KV, p, g) point."""
    sat = saturation_tokens(hw, model)
    tg = t_gpu(hw, model) if t_gpu_value is None else t_gpu_value
    bound, util = t_max(hw, model, kv_capacity, p, g, tg)
    b_mem, b_kv = required_bandwidths(hw, model, kv_capacity * kv_bytes_per_token(model))
    return Stage1Report(
        intensity=gemm_intensity(model, sat.exact),
        saturation_tokens=sat.exact,
        saturation_tokens_approx=sat.approx,
        delta=weight_transfer_time(hw, model),
        pme=pme(p, g),
        t_max=bound,
        t_gpu=tg,
        utilization=util,
        required_mem_bandwidth=b_mem,
        required_kv_bandwidth=b_kv,
        required_cpu_attn_flops=required_cpu_attn_throughput(model, b_kv, i_cpu_attn),
        effective_kv_capacity=effective_kv_capacity(p, g, kv_capacity),
    )
