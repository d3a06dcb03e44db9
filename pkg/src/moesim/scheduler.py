"""Resource-aware prefill/decode scheduler over a paged KV cache.

A sequence is prefilled in one iteration (no token is emitted by the
prefill pass) and then decodes one token per iteration until it has
generated ``g_target`` tokens.  While decoding it holds
``ceil((p + generated) / b)`` blocks, so its lifetime occupancy visits the
g+1 sizes p, p+1, ..., p+g.

Per-sequence state lives in numpy arrays indexed by sequence id; the
prefill queue is a deque and the decode set an admission-ordered array.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import InfeasibleWorkloadError, KVCacheConfig, WorkloadSpec


class Phase(enum.IntEnum):
    # PREFILLING only exists inside an iteration: commit moves admitted
    # sequences straight from the queue to DECODING.
    QUEUED = 0
    PREFILLING = 1
    DECODING = 2
    PREEMPTED = 3
    FINISHED = 4


class Mode(str, enum.Enum):
    NORMAL = "Normal"
    PREEMPTION = "Preemption"


@dataclass(frozen=True)
class SequenceState:
    id: int
    p: int
    g_target: int
    generated: int
    phase: Phase
    blocks_held: int
    admitted_iter: int


@dataclass
class BlockAllocator:
    total_blocks: int
    free_blocks: int
    block_size: int

    def allocate(self, n: int) -> None:
        assert 0 <= n <= self.free_blocks, "block allocation overflow"
        self.free_blocks -= n

    def release(self, n: int) -> None:
        assert n >= 0 and self.free_blocks + n <= self.total_blocks, "block release overflow"
        self.free_blocks += n

    def blocks_for(self, tokens) -> int:
        return -(-int(tokens) // self.block_size)


@dataclass(frozen=True)
class IterationPlan:
    """What one iteration will run.

    ``decode_ctx[i]`` is the KV length attended by ``decode_seq_ids[i]``;
    ``prefill_lens[i]`` is the (re-)prefill length of ``prefill_seq_ids[i]``.
    """

    iteration: int
    mode: Mode
    decode_seq_ids: tuple[int, ...]
    decode_ctx: tuple[int, ...]
    prefill_seq_ids: tuple[int, ...]
    prefill_lens: tuple[int, ...]
    preempted_ids: tuple[int, ...]

    @property
    def decode_tokens(self) -> int:
        return len(self.decode_seq_ids)

    @property
    def prefill_tokens(self) -> int:
        return sum(self.prefill_lens)

    @property
    def admitted(self) -> int:
        return len(self.prefill_seq_ids)


@dataclass(frozen=True)
class StepRecord:
    plan: IterationPlan
    finished: int
    free_blocks: int


@dataclass
class ScheduleStats:
    iterations: int = 0
    preemption_events: int = 0
    preempted_sequences: int = 0
    prefill_tokens: int = 0
    decode_tokens: int = 0
    generated: int = 0
    peak_blocks: int = 0
    records: list = field(default_factory=list)


def estimate_decode_demand(ctx, held, block_size: int) -> int:
    """New blocks the decode set needs to store one more token per sequence."""
    return int(kernels.decode_block_demand(
        np.ascontiguousarray(ctx, dtype=np.int64),
        np.ascontiguousarray(held, dtype=np.int64),
        int(block_size),
    ))


def check_feasible(workload: WorkloadSpec, kv: KVCacheConfig, n_real: int) -> None:
    """Raise InfeasibleWorkloadError if some sequence can never complete."""
    b, n = kv.block_size, kv.num_blocks
    for i, (p, g) in enumerate(zip(workload.prompt_lens, workload.gen_lens)):
        if math.ceil((p + g) / b) > n:
            raise InfeasibleWorkloadError(
                f"workload infeasible: sequence {i} ({p}+{g} tokens) exceeds KV capacity"
            )
        # a sequence preempted just before its last token re-prefills p+g-1 tokens
        if p + g - 1 > n_real:
            raise InfeasibleWorkloadError(
                f"workload infeasible: sequence {i} re-prefill of {p + g - 1} tokens exceeds "
                f"token budget {n_real}"
            )


class Scheduler:
    """Two-mode scheduler: normal admission or decode-set preemption."""

    def __init__(self, workload: WorkloadSpec, kv: KVCacheConfig, n_real: int, check: bool = True):
        if n_real < 1:
            raise ValueError("n_real must be >= 1")
        self.kv = kv
        self.n_real = int(n_real)
        if check:
            check_feasible(workload, kv, self.n_real)
        k = workload.batch_size
        self.p = np.asarray(workload.prompt_lens, dtype=np.int64)
        self.g_target = np.asarray(workload.gen_lens, dtype=np.int64)
        self.generated = np.zeros(k, dtype=np.int64)
        self.phase = np.full(k, Phase.QUEUED, dtype=np.int8)
        self.held = np.zeros(k, dtype=np.int64)
        self.admitted_iter = np.full(k, -1, dtype=np.int64)
        self.queue: deque[int] = deque(range(k))
        self.decode = np.empty(0, dtype=np.int64)
        self.alloc = BlockAllocator(kv.num_blocks, kv.num_blocks, kv.block_size)
        self.iteration = 0

    # -- views -----------------------------------------------------------
    def sequence(self, i: int) -> SequenceState:
        return SequenceState(
            id=i,
            p=int(self.p[i]),
            g_target=int(self.g_target[i]),
            generated=int(self.generated[i]),
            phase=Phase(int(self.phase[i])),
            blocks_held=int(self.held[i]),
            admitted_iter=int(self.admitted_iter[i]),
        )

    def sequences(self) -> list[SequenceState]:
        return [self.sequence(i) for i in range(len(self.p))]

    @property
    def done(self) -> bool:
        return not self.queue and self.decode.size == 0

    def _ctx(self, ids: np.ndarray) -> np.ndarray:
        return self.p[ids] + self.generated[ids]

    # -- planning --------------------------------------------------------
    def plan(self) -> IterationPlan:
        """Decide the next iteration without mutating state."""
        b = self.alloc.block_size
        free = self.alloc.free_blocks
        decode = self.decode
        ctx = self._ctx(decode)
        held = self.held[decode]
        demand = estimate_decode_demand(ctx, held, b)

        mode = Mode.NORMAL
        victims: list[int] = []
        if demand > free:
            mode = Mode.PREEMPTION
            need = -(-(ctx + 1) // b) - held
            # evict youngest first until the survivors' next token fits
            cut = decode.size
            while demand > free:
                if cut <= 1:
                    raise InfeasibleWorkloadError(
                        "workload infeasible: decode demand unsatisfiable after evicting all but one sequence"
                    )
                cut -= 1
                victims.append(int(decode[cut]))
                free += int(held[cut])
                demand -= int(need[cut])
            decode, ctx = decode[:cut], ctx[:cut]

        budget = self.n_real - decode.size
        free -= demand
        admit: list[int] = []
        lens: list[int] = []
        for sid in self.queue:
            if mode is Mode.PREEMPTION and self.phase[sid] != Phase.PREEMPTED:
                break
            length = int(self.p[sid] + self.generated[sid])
            blocks = -(-length // b)
            if length > budget or blocks > free:
                break
            admit.append(sid)
            lens.append(length)
            budget -= length
            free -= blocks

        return IterationPlan(
            iteration=self.iteration,
            mode=mode,
            decode_seq_ids=tuple(decode.tolist()),
            decode_ctx=tuple(ctx.tolist()),
            prefill_seq_ids=tuple(admit),
            prefill_lens=tuple(lens),
            preempted_ids=tuple(victims),
        )

    # -- commit ----------------------------------------------------------
    def commit(self, plan: IterationPlan) -> StepRecord:
        """Apply a plan produced by ``plan()`` for the current iteration."""
        if plan.iteration != self.iteration:
            raise ValueError("plan is stale")
        b = self.alloc.block_size

        for sid in plan.preempted_ids:
            self.alloc.release(int(self.held[sid]))
            self.held[sid] = 0
            self.phase[sid] = Phase.PREEMPTED
        keep = self.decode.size - len(plan.preempted_ids)
        decode = self.decode[:keep]

        finished = 0
        if decode.size:
            new_held = -(-(self._ctx(decode) + 1) // b)
            self.alloc.allocate(int((new_held - self.held[decode]).sum()))
            self.held[decode] = new_held
            self.generated[decode] += 1
            done = self.generated[decode] >= self.g_target[decode]
            if done.any():
                fin = decode[done]
                self.alloc.release(int(self.held[fin].sum()))
                self.held[fin] = 0
                self.phase[fin] = Phase.FINISHED
                finished = int(fin.size)
                decode = decode[~done]

        for sid, length in zip(plan.prefill_seq_ids, plan.prefill_lens):
            popped = self.queue.popleft()
            assert popped == sid, "prefill admissions must come from the queue head"
            blocks = -(-length // b)
            self.alloc.allocate(blocks)
            self.held[sid] = blocks
            self.phase[sid] = Phase.DECODING
            self.admitted_iter[sid] = self.iteration
        if plan.prefill_seq_ids:
            decode = np.concatenate([decode, np.asarray(plan.prefill_seq_ids, dtype=np.int64)])
        # youngest victim was evicted first; the oldest ends up at the head
        for sid in plan.preempted_ids:
            self.queue.appendleft(sid)

        self.decode = decode
        self.iteration += 1
        return StepRecord(plan=plan, finished=finished, free_blocks=self.alloc.free_blocks)

    def step(self) -> StepRecord:
        return self.commit(self.plan())


def check_invariants(s: Scheduler) -> None:
    """Assert the allocator and per-sequence invariants."""
    b = s.alloc.block_size
    live = s.phase == Phase.DECODING
    assert 0 <= s.alloc.free_blocks <= s.alloc.total_blocks
    assert int(s.held.sum()) + s.alloc.free_blocks == s.alloc.total_blocks
    assert np.all(s.generated <= s.g_target)
    assert np.array_equal(s.held[live], -(-(s.p[live] + s.generated[live]) // b))
    assert np.all(s.held[~live] == 0)
    assert set(s.decode.tolist()) == set(np.nonzero(live)[0].tolist())


def run_schedule(
    workload: WorkloadSpec,
    kv: KVCacheConfig,
    n_real: int,
    max_iterations: int | None = None,
    check: bool = False,
) -> ScheduleStats:
    """Drive the scheduler to completion and collect the plan trace."""
    s = Scheduler(workload, kv, n_real)
    stats = ScheduleStats()
    limit = max_iterations if max_iterations is not None else 10 * (
        sum(workload.gen_lens) + workload.batch_size
    ) + 100
    while not s.done:
        if s.iteration >= limit:
            raise RuntimeError(f"scheduler did not finish within {limit} iterations")
        plan = s.plan()
        assert plan.prefill_tokens + plan.decode_tokens <= n_real
        rec = s.commit(plan)
        if check:
            check_invariants(s)
        stats.records.append(rec)
        stats.iterations += 1
        stats.prefill_tokens += plan.prefill_tokens
        stats.decode_tokens += plan.decode_tokens
        stats.generated += plan.decode_tokens
        stats.peak_blocks = max(stats.peak_blocks, s.alloc.total_blocks - rec.free_blocks)
        if plan.preempted_ids:
            stats.preemption_events += 1
            stats.preempted_sequences += len(plan.preempted_ids)
    return stats
