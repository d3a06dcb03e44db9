"""Pipeline profiler: fit per-layer GEMM time against token count.

The fitted line gives ``n_real``, the token count whose per-layer GEMM time
matches the per-layer weight transfer time.  The scheduler uses it as its
per-iteration token budget.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HardwareProfile, ModelConfig, model_bytes

DEFAULT_TOKEN_GRID = (512, 1024, 2048, 4096, 8192, 12288, 16384, 24576)
DEFAULT_NOISE = 0.02


class ProfilerFitError(ValueError):
    """Samples cannot determine a line."""


@dataclass(frozen=True)
class ProfilerFit:
    slope: float
    intercept: float
    n_real: int
    per_layer_io: float


def per_layer_weight_io(hw: HardwareProfile, model: ModelConfig) -> float:
    """Seconds to move one layer's share of the weights at full bandwidth."""
    return model_bytes(model) / model.num_layers / hw.io_bandwidth


def synthesize_profile_samples(
    hw: HardwareProfile,
    model: ModelConfig,
    token_grid=DEFAULT_TOKEN_GRID,
    noise: float = DEFAULT_NOISE,
    seed: int = 0,
) -> list[tuple[int, float]]:
    """Per-layer GEMM seconds at each grid point with multiplicative noise."""
    grid = [int(t) for t in token_grid]
    if not grid:
        raise ValueError("token_grid must be non-empty")
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, noise, size=len(grid)) if noise > 0 else np.zeros(len(grid))
    per_token = model.flops_per_token_layer() / hw.gpu_flops
    return [(t, per_token * t * (1.0 + e)) for t, e in zip(grid, eps)]


def line_fit(samples) -> tuple[float, float]:
    """Ordinary least squares (slope, intercept), computed about the mean."""
    xs = np.asarray([s[0] for s in samples], dtype=float)
    ys = np.asarray([s[1] for s in samples], dtype=float)
    if xs.size < 2:
        raise ProfilerFitError("profiler fit needs at least two samples")
    dx = xs - xs.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise ProfilerFitError("profiler fit needs distinct token counts")
    slope = float(dx @ (ys - ys.mean())) / sxx
    return slope, float(ys.mean() - slope * xs.mean())


def profiler_fit(samples, per_layer_io: float) -> ProfilerFit:
    """Fit a line and invert it at the per-layer weight transfer time."""
    slope, intercept = line_fit(samples)
    if slope <= 0:
        raise ProfilerFitError(f"profiler fit slope must be positive, got {slope:g}")
    # floor, tolerating float noise just below an exact integer
    n_real = max(1, int(np.floor((per_layer_io - intercept) / slope + 1e-6)))
    return ProfilerFit(slope, intercept, n_real, per_layer_io)


def profile(
    hw: HardwareProfile,
    model: ModelConfig,
    token_grid=DEFAULT_TOKEN_GRID,
    noise: float = DEFAULT_NOISE,
    seed: int = 0,
) -> ProfilerFit:
    samples = synthesize_profile_samples(hw, model, token_grid, noise, seed)
    return profiler_fit(samples, per_layer_weight_io(hw, model))
