"""Workload traces and synthetic length distributions."""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import optimize, stats

from .core import ConfigError, WorkloadSpec

log = logging.getLogger(__name__)

# (mean prompt, max prompt, max generation) per dataset shape.
PRESETS = {
    "mtbench": {"p_mean": 98, "p_max": 450, "g_max": 32},
    "rag": {"p_mean": 926, "p_max": 1843, "g_max": 128},
    "aime": {"p_mean": 128, "p_max": 410, "g_max": 512},
}

# The fitted log-normal places p_max at this upper quantile.
_MAX_QUANTILE = 0.999


def ingest_trace(path) -> WorkloadSpec:
    """Read a trace with one ``prompt_len``/``gen_len`` record per line.

    Accepts JSON lines or CSV with a header row.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"workload.trace: cannot read {path}: {exc}") from None
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not lines:
        raise ConfigError(f"workload.trace: {path} is empty")

    pairs = []
    if lines[0][1].lstrip().startswith("{"):
        for lineno, ln in lines:
            try:
                rec = json.loads(ln)
                pairs.append((int(rec["prompt_len"]), int(rec["gen_len"])))
            except (ValueError, KeyError, TypeError):
                raise ConfigError(f"workload.trace: {path}:{lineno}: malformed record") from None
    else:
        header_no, header = lines[0]
        reader = csv.DictReader([header] + [ln for _, ln in lines[1:]])
        if not reader.fieldnames or not {"prompt_len", "gen_len"} <= set(reader.fieldnames):
            raise ConfigError(f"workload.trace: {path}:{header_no}: header needs prompt_len,gen_len")
        for (lineno, _), row in zip(lines[1:], reader):
            try:
                pairs.append((int(row["prompt_len"]), int(row["gen_len"])))
            except (ValueError, TypeError):
                raise ConfigError(f"workload.trace: {path}:{lineno}: malformed record") from None
        if not pairs:
            raise ConfigError(f"workload.trace: {path} has no records")

    for lineno, (p, g) in zip((n for n, _ in lines[-len(pairs):]), pairs):
        if p < 1 or g < 1:
            raise ConfigError(f"workload.trace: {path}:{lineno}: lengths must be >= 1")
    spec = WorkloadSpec.from_pairs(pairs)
    log.info(
        "loaded %d sequences from %s (mean p %.1f, max p %d)",
        spec.batch_size,
        path,
        spec.mean_prompt(),
        max(spec.prompt_lens),
    )
    return spec


def trace_summary(spec: WorkloadSpec) -> dict:
    return {
        "count": spec.batch_size,
        "p_mean": spec.mean_prompt(),
        "p_max": max(spec.prompt_lens),
        "g_mean": spec.mean_gen(),
        "g_max": max(spec.gen_lens),
    }


def write_trace(spec: WorkloadSpec, path) -> None:
    with open(path, "w") as fh:
        for p, g in zip(spec.prompt_lens, spec.gen_lens):
            fh.write(json.dumps({"prompt_len": p, "gen_len": g}) + "\n")


def _truncated_mean(mu: float, sigma: float, upper: float) -> float:
    # E[X | X <= upper] for X ~ LogNormal(mu, sigma)
    z = (math.log(upper) - mu) / sigma
    return math.exp(mu + sigma**2 / 2) * stats.norm.cdf(z - sigma) / stats.norm.cdf(z)


def fit_lognormal(p_mean: float, p_max: float) -> tuple[float, float]:
    """Log-normal (mu, sigma) whose mean truncated at ``p_max`` is ``p_mean``.

    ``p_max`` is pinned to the 99.9th percentile of the untruncated law.
    """
    if not 1 <= p_mean < p_max:
        raise ConfigError("workload.distribution: need 1 <= p_mean < p_max")
    zq = stats.norm.ppf(_MAX_QUANTILE)

    def gap(sigma):
        mu = math.log(p_max) - zq * sigma
        return _truncated_mean(mu, sigma, p_max) - p_mean

    lo, hi = 1e-6, 10.0
    if gap(lo) < 0:
        raise ConfigError("workload.distribution: p_mean too close to p_max")
    sigma = optimize.brentq(gap, lo, hi)
    return math.log(p_max) - zq * sigma, sigma


def sample_lengths(p_mean, p_max, count, seed) -> np.ndarray:
    mu, sigma = fit_lognormal(p_mean, p_max)
    rng = np.random.default_rng(seed)
    out = np.empty(0)
    while out.size < count:
        draw = rng.lognormal(mu, sigma, size=2 * count)
        out = np.concatenate([out, draw[draw <= p_max]])
    return np.clip(np.rint(out[:count]), 1, p_max).astype(np.int64)


def sample_distribution(spec: Mapping, key: str = "distribution") -> WorkloadSpec:
    """Deterministic workload from ``{p_mean, p_max, g_max, count, seed}``.

    Prompt lengths follow a truncated log-normal; every sequence generates
    ``g_max`` tokens.
    """
    try:
        p_mean = float(spec["p_mean"])
        p_max = int(spec["p_max"])
        g_max = int(spec["g_max"])
        count = int(spec["count"])
    except KeyError as exc:
        raise ConfigError(f"{key}.{exc.args[0]}: missing key") from None
    seed = int(spec.get("seed", 0))
    if count < 1 or g_max < 1:
        raise ConfigError(f"{key}: count and g_max must be >= 1")
    if p_max == p_mean:
        prompts = np.full(count, p_max, dtype=np.int64)
    else:
        prompts = sample_lengths(p_mean, p_max, count, seed)
    return WorkloadSpec(tuple(int(p) for p in prompts), (g_max,) * count)


def sample_preset(sec: Mapping, key: str = "workload") -> WorkloadSpec:
    name = str(sec["preset"]).lower()
    if name not in PRESETS:
        raise ConfigError(f"{key}.preset: unknown preset {name!r} (choose from {sorted(PRESETS)})")
    spec = dict(PRESETS[name])
    for k in ("g_max", "count", "seed", "p_mean", "p_max"):
        if k in sec:
            spec[k] = sec[k]
    if "count" not in spec:
        raise ConfigError(f"{key}.count: missing key")
    return sample_distribution(spec, key=key)
