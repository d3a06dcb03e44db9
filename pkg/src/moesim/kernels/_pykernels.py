"""Pure-Python implementations of the hot simulation kernels.

These mirror ``_ckernels.pyx`` line for line and are used whenever the
compiled extension is unavailable (or ``MOESIM_PURE_PYTHON=1`` is set).
"""
from __future__ import annotations

import numpy as np


def lifetime_block_sum(p: int, g: int, b: int) -> int:
    """Sum of ceil((p + i) / b) for i = 0..g."""
    total = 0
    for i in range(g + 1):
        total += -(-(p + i) // b)
    return total


def decode_block_demand(ctx: np.ndarray, held: np.ndarray, b: int) -> int:
    """New blocks the decode set needs to store one more token each."""
    if len(ctx) == 0:
        return 0
    need = -(-(ctx + 1) // b) - held
    return int(need.sum())


def _contended(io_bw: float, kv_rate: float, mem_bw: float) -> float:
    if kv_rate + io_bw <= mem_bw:
        return io_bw
    return io_bw * mem_bw / (kv_rate + io_bw)


def _segment(load_bytes, packet_bytes, bw, phases, out):
    """Run one pipeline segment (two phases plus a weight load) from t=0.

    ``phases`` holds two (gpu, cpu, d2h_bytes, h2d_bytes) tuples.  The H2D
    channel carries weight packets and attention results; a sync transfer
    waits only for the packet in flight.  D2H runs on its own channel.
    ``out`` accumulates [h2d_busy, weight_busy, gpu_busy, cpu_busy].
    Returns the segment duration.
    """
    t = 0.0
    link_free = 0.0
    left = load_bytes
    for gpu, cpu, d2h, h2d in phases:
        comp_end = t + (gpu if gpu > cpu else cpu)
        out[2] += gpu
        out[3] += cpu
        h2d_done = comp_end
        if h2d > 0.0:
            while left > 0.0 and link_free < comp_end:
                sz = packet_bytes if left > packet_bytes else left
                link_free += sz / bw
                out[0] += sz / bw
                out[1] += sz / bw
                left -= sz
            start = link_free if link_free > comp_end else comp_end
            link_free = start + h2d / bw
            out[0] += h2d / bw
            h2d_done = link_free
        d2h_done = comp_end + d2h / bw
        t = h2d_done if h2d_done > d2h_done else d2h_done
    while left > 0.0:
        sz = packet_bytes if left > packet_bytes else left
        link_free += sz / bw
        out[0] += sz / bw
        out[1] += sz / bw
        left -= sz
    return t if t > link_free else link_free


def _run_segment(load_bytes, packet_bytes, io_bw, mem_bw, contention, kv_bytes, phases, out):
    if contention and kv_bytes > 0.0:
        probe = [0.0, 0.0, 0.0, 0.0]
        t0 = _segment(load_bytes, packet_bytes, io_bw, phases, probe)
        bw = _contended(io_bw, kv_bytes / t0, mem_bw) if t0 > 0.0 else io_bw
    else:
        bw = io_bw
    return _segment(load_bytes, packet_bytes, bw, phases, out), bw


def iteration_timeline(
    layer_bytes: np.ndarray,
    packet_bytes: float,
    io_bw: float,
    mem_bw: float,
    contention: bool,
    ga: tuple[float, float],
    gb: tuple[float, float],
    cpu: tuple[float, float],
    d2h: tuple[float, float],
    h2d: tuple[float, float],
    kv: tuple[float, float],
) -> tuple[float, float, float, float, float, float, float]:
    """Timed two-partition pipeline schedule for one inference iteration.

    ``layer_bytes[i]`` is the weight load issued in segment ``i`` (prologue
    is segment 0, main stages 1..N-1); the epilogue loads nothing.  Index
    0/1 of every pair refers to partition alpha/beta.  Per-layer CPU work
    reads ``kv`` bytes of KV cache.

    Returns (wall, h2d_busy, weight_busy, gpu_busy, cpu_busy,
    max_resident_bytes, min_effective_bw).
    """
    n = len(layer_bytes)
    out = [0.0, 0.0, 0.0, 0.0]
    wall = 0.0
    min_bw = io_bw
    max_resident = 0.0

    prologue = (
        (ga[0], 0.0, d2h[0], 0.0),
        (ga[1], cpu[0], d2h[1], h2d[0]),
    )
    main = (
        (gb[0] + ga[0], cpu[1], d2h[0], h2d[1]),
        (gb[1] + ga[1], cpu[0], d2h[1], h2d[0]),
    )
    epilogue = (
        (gb[0], cpu[1], 0.0, h2d[1]),
        (gb[1], 0.0, 0.0, 0.0),
    )

    resident = layer_bytes[n - 1] if n > 0 else 0.0
    for i in range(n):
        phases = prologue if i == 0 else main
        kv_bytes = kv[0] if i == 0 else kv[0] + kv[1]
        dur, bw = _run_segment(
            float(layer_bytes[i]), packet_bytes, io_bw, mem_bw, contention, kv_bytes, phases, out
        )
        wall += dur
        if bw < min_bw:
            min_bw = bw
        if resident + layer_bytes[i] > max_resident:
            max_resident = resident + layer_bytes[i]
        resident = layer_bytes[i]
    dur, bw = _run_segment(0.0, packet_bytes, io_bw, mem_bw, contention, kv[1], epilogue, out)
    wall += dur
    if bw < min_bw:
        min_bw = bw
    return wall, out[0], out[1], out[2], out[3], max_resident, min_bw


__all__ = [
    "lifetime_block_sum",
    "decode_block_demand",
    "iteration_timeline",
]
