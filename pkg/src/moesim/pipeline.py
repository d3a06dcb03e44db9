"""Timed simulation of the two-partition weight-streaming pipeline.

Every iteration streams all layers over the CPU-GPU link.  The batch is
split into partitions alpha and beta; within a stage the GPU runs one
partition's GEMMs while the CPU attends the other's decode tokens.  GA is
the QKV projection, GB the output projection plus the MoE FFN, and the CPU
attention sits between them.  The timeline itself is computed by
``kernels.iteration_timeline``.
"""
from __future__ import annotations

import csv
import enum
import io
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import HardwareProfile, KVCacheConfig, ModelConfig, WorkloadSpec, kv_bytes_per_token, model_bytes
from .profiler import DEFAULT_NOISE, DEFAULT_TOKEN_GRID, ProfilerFit, profile
from .scheduler import IterationPlan, Scheduler

log = logging.getLogger(__name__)

DEFAULT_PACKET_BYTES = 100e6

TRACE_COLUMNS = (
    "iteration",
    "mode",
    "prefill_tokens",
    "decode_tokens",
    "finished",
    "preempted",
    "free_blocks",
    "io_time_s",
    "gpu_time_s",
    "cpu_time_s",
    "wall_time_s",
    "decode_tput",
    "prefill_tput",
    "gpu_util",
)


class Partition(str, enum.Enum):
    ALPHA = "Alpha"
    BETA = "Beta"


@dataclass(frozen=True)
class PartitionLoad:
    prefill_tokens: int = 0
    decode_tokens: int = 0
    ctx_sum: int = 0

    @property
    def tokens(self) -> int:
        return self.prefill_tokens + self.decode_tokens


@dataclass(frozen=True)
class StageTiming:
    layer: int
    phase: Partition
    gpu_time: float
    cpu_attn_time: float
    sync_transfer_time: float
    weight_io_time: float
    sync_bytes: float


@dataclass(frozen=True)
class IterationTiming:
    iteration: int
    io_time: float
    gpu_time: float
    cpu_time: float
    wall_time: float
    decode_throughput: float
    prefill_throughput: float
    gpu_utilization: float
    weight_io_time: float = 0.0
    effective_bandwidth: float = 0.0
    max_resident_bytes: float = 0.0


@dataclass
class DataMoverState:
    """FIFO of layer-granular requests split into fixed-size packets."""

    packet_bytes: float = DEFAULT_PACKET_BYTES
    effective_bandwidth: float = 0.0
    pending_requests: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.packet_bytes <= 0:
            raise ValueError("packet_bytes must be positive")

    def submit(self, request_id, nbytes: float) -> None:
        self.pending_requests.append((request_id, float(nbytes)))

    def packets(self):
        """Yield (request_id, packet_bytes) in completion order, draining the queue."""
        while self.pending_requests:
            rid, left = self.pending_requests.popleft()
            while left > 0:
                sz = min(self.packet_bytes, left)
                left -= sz
                yield rid, sz


@dataclass
class SimOptions:
    contention: bool = False
    packet_bytes: float = DEFAULT_PACKET_BYTES
    n_real: int | None = None
    profiler_grid: tuple = DEFAULT_TOKEN_GRID
    profiler_noise: float = DEFAULT_NOISE
    seed: int = 0
    max_iterations: int | None = None


# -- per-token costs ------------------------------------------------------

def ga_flops(model: ModelConfig) -> float:
    """QKV projection FLOPs per token per layer."""
    h, s = model.hidden_dim, model.gqa_group
    return 2.0 * (h * h + 2 * h * h / s)


def gb_flops(model: ModelConfig) -> float:
    """Output projection plus routed-expert FLOPs per token per layer."""
    h, hi = model.hidden_dim, model.intermediate_dim
    return 2.0 * (h * h + 3 * model.top_k * h * hi)


def sync_bytes_bound(n: int, model: ModelConfig) -> float:
    """Upper bound on one partition's per-phase CPU-GPU exchange, per direction.

    Each token moves at most a query (or attention output) plus its new K/V.
    """
    d, s = model.hidden_dim, model.gqa_group
    return n * (d + 2 * d / s) * model.dtype_bytes


def d2h_bytes(load: PartitionLoad, model: ModelConfig) -> float:
    """GPU->CPU: new K/V for every token, plus the query for decode tokens."""
    d, s = model.hidden_dim, model.gqa_group
    kv = 2 * d / s
    return (load.prefill_tokens * kv + load.decode_tokens * (d + kv)) * model.dtype_bytes


def h2d_bytes(load: PartitionLoad, model: ModelConfig) -> float:
    """CPU->GPU: one attention output vector per decode token."""
    return load.decode_tokens * model.hidden_dim * model.dtype_bytes


def layer_weight_bytes(model: ModelConfig) -> np.ndarray:
    """Per-layer transfer sizes; embedding/head bytes are spread evenly."""
    return np.full(model.num_layers, model_bytes(model) / model.num_layers, dtype=np.float64)


def contended_io_bandwidth(hw: HardwareProfile, kv_read_rate: float) -> float:
    """Link bandwidth left after proportional sharing of CPU memory bandwidth."""
    if kv_read_rate < 0:
        raise ValueError("kv_read_rate must be >= 0")
    if kv_read_rate + hw.io_bandwidth <= hw.cpu_mem_bandwidth:
        return hw.io_bandwidth
    return hw.io_bandwidth * hw.cpu_mem_bandwidth / (kv_read_rate + hw.io_bandwidth)


def phase_times(
    load: PartitionLoad,
    hw: HardwareProfile,
    model: ModelConfig,
    layer: int = 0,
    phase: Partition = Partition.ALPHA,
) -> StageTiming:
    """Uncontended per-layer costs of one partition."""
    sync = sync_bytes_bound(load.tokens, model)
    return StageTiming(
        layer=layer,
        phase=phase,
        gpu_time=load.tokens * (ga_flops(model) + gb_flops(model)) / hw.gpu_flops,
        cpu_attn_time=load.ctx_sum / hw.cpu_attn_throughput,
        sync_transfer_time=sync / hw.io_bandwidth,
        weight_io_time=model_bytes(model) / model.num_layers / hw.io_bandwidth,
        sync_bytes=sync,
    )


def _snake(n: int) -> tuple[np.ndarray, np.ndarray]:
    # ABBA ordering keeps counts within one and sums roughly even
    pos = np.arange(n)
    to_alpha = (pos % 4 == 0) | (pos % 4 == 3)
    return to_alpha, ~to_alpha


def split_partitions(plan: IterationPlan) -> tuple[PartitionLoad, PartitionLoad]:
    """Balance prefill and decode work across alpha and beta."""
    pre = np.sort(np.asarray(plan.prefill_lens, dtype=np.int64))[::-1]
    ctx = np.sort(np.asarray(plan.decode_ctx, dtype=np.int64))[::-1]
    pa, pb = _snake(pre.size)
    da, db = _snake(ctx.size)
    alpha = PartitionLoad(int(pre[pa].sum()), int(da.sum()), int(ctx[da].sum()))
    beta = PartitionLoad(int(pre[pb].sum()), int(db.sum()), int(ctx[db].sum()))
    return alpha, beta


def simulate_iteration(
    plan: IterationPlan,
    hw: HardwareProfile,
    model: ModelConfig,
    contention: bool = False,
    packet_bytes: float = DEFAULT_PACKET_BYTES,
    layer_bytes: np.ndarray | None = None,
) -> IterationTiming:
    """Wall time and resource busy times for one planned iteration."""
    alpha, beta = split_partitions(plan)
    parts = (alpha, beta)
    ga = tuple(x.tokens * ga_flops(model) / hw.gpu_flops for x in parts)
    gb = tuple(x.tokens * gb_flops(model) / hw.gpu_flops for x in parts)
    cpu = tuple(x.ctx_sum / hw.cpu_attn_throughput for x in parts)
    d2h = tuple(d2h_bytes(x, model) for x in parts)
    h2d = tuple(h2d_bytes(x, model) for x in parts)
    kv_per_layer = kv_bytes_per_token(model) / model.num_layers
    kv = tuple(x.ctx_sum * kv_per_layer for x in parts)
    if layer_bytes is None:
        layer_bytes = layer_weight_bytes(model)

    wall, h2d_busy, weight_busy, gpu_busy, cpu_busy, resident, min_bw = kernels.iteration_timeline(
        layer_bytes,
        float(packet_bytes),
        hw.io_bandwidth,
        hw.cpu_mem_bandwidth,
        bool(contention),
        ga,
        gb,
        cpu,
        d2h,
        h2d,
        kv,
    )
    return IterationTiming(
        iteration=plan.iteration,
        io_time=h2d_busy,
        gpu_time=gpu_busy,
        cpu_time=cpu_busy,
        wall_time=wall,
        decode_throughput=plan.decode_tokens / wall if wall > 0 else 0.0,
        prefill_throughput=plan.prefill_tokens / wall if wall > 0 else 0.0,
        gpu_utilization=gpu_busy / wall if wall > 0 else 0.0,
        weight_io_time=weight_busy,
        effective_bandwidth=min_bw,
        max_resident_bytes=resident,
    )


@dataclass
class SimTrace:
    rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        idx = TRACE_COLUMNS.index(name)
        return np.asarray([r[idx] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
        return buf.getvalue()


@dataclass
class SimResult:
    trace: SimTrace
    summary: dict
    fit: ProfilerFit | None


def resolve_n_real(hw: HardwareProfile, model: ModelConfig, options: SimOptions) -> tuple[int, ProfilerFit | None]:
    if options.n_real is not None:
        return int(options.n_real), None
    fit = profile(hw, model, options.profiler_grid, options.profiler_noise, options.seed)
    return fit.n_real, fit


def simulate_run(
    workload: WorkloadSpec,
    hw: HardwareProfile,
    model: ModelConfig,
    kv: KVCacheConfig,
    options: SimOptions | None = None,
) -> SimResult:
    """Run the scheduler to completion, timing every iteration."""
    options = options or SimOptions()
    n_real, fit = resolve_n_real(hw, model, options)
    sched = Scheduler(workload, kv, n_real)
    layer_bytes = layer_weight_bytes(model)
    trace = SimTrace()
    limit = options.max_iterations
    if limit is None:
        limit = 10 * (sum(workload.gen_lens) + workload.batch_size) + 100

    preemption_events = 0
    total_wall = gpu_sum = 0.0
    generated = prefill = 0
    while not sched.done:
        if sched.iteration >= limit:
            raise RuntimeError(f"simulation did not finish within {limit} iterations")
        plan = sched.plan()
        rec = sched.commit(plan)
        t = simulate_iteration(plan, hw, model, options.contention, options.packet_bytes, layer_bytes)
        trace.timings.append(t)
        trace.rows.append((
            plan.iteration,
            plan.mode.value,
            plan.prefill_tokens,
            plan.decode_tokens,
            rec.finished,
            len(plan.preempted_ids),
            rec.free_blocks,
            t.io_time,
            t.gpu_time,
            t.cpu_time,
            t.wall_time,
            t.decode_throughput,
            t.prefill_throughput,
            t.gpu_utilization,
        ))
        total_wall += t.wall_time
        gpu_sum += t.gpu_time
        generated += plan.decode_tokens
        prefill += plan.prefill_tokens
        preemption_events += bool(plan.preempted_ids)

    summary = {
        "iterations": sched.iteration,
        "sequences": workload.batch_size,
        "n_real": n_real,
        "generated_tokens": generated,
        "prefill_tokens": prefill,
        "total_wall_time_s": total_wall,
        "throughput_tok_s": generated / total_wall if total_wall > 0 else 0.0,
        "mean_gpu_util": gpu_sum / total_wall if total_wall > 0 else 0.0,
        "preemption_events": preemption_events,
        "contention": bool(options.contention),
    }
    log.info(
        "simulated %d iterations: %.1f tok/s, util %.3f, %d preemptions",
        sched.iteration,
        summary["throughput_tok_s"],
        summary["mean_gpu_util"],
        preemption_events,
    )
    return SimResult(trace, summary, fit)


def weight_io_stretch(with_contention: SimResult, without: SimResult) -> float:
    """Relative increase in mean per-iteration weight IO time."""
    a = np.mean([t.weight_io_time for t in with_contention.trace.timings])
    b = np.mean([t.weight_io_time for t in without.trace.timings])
    return float(a / b - 1.0) if b > 0 else math.nan
