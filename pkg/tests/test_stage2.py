import math

import numpy as np
import pytest

from conftest import hardware, mixtral
from moesim import stage1, stage2
from moesim.core import InfeasibleWorkloadError, KVCacheConfig


def brute_q(n, b, p, g):
    return n / sum(math.ceil((p + i) / b) for i in range(g + 1))


def step_t1(K, g, q, delta):
    """Admit q sequences per iteration until K are in, then drain g iterations."""
    admitted, it = 0.0, 0
    while admitted < K:
        admitted += q
        it += 1
    return K * g / ((it + g) * delta)


def ledger_iterations(K, p, g, t_gpu_iter):
    """Token ledger: each iteration spends t_gpu_iter on decode first, then prefill."""
    admitted_at = []
    remaining = K * p
    it = 0
    while remaining > 1e-9:
        decoding = sum(a for start, a in admitted_at if it - g <= start < it)
        prefill = min(max(t_gpu_iter - decoding, 0.0), remaining)
        admitted_at.append((it, prefill / p))
        remaining -= prefill
        it += 1
    return it + g


def test_q_example():
    assert stage2.lifetime_blocks(100, 128, 16) == 1383
    q = stage2.prefill_rate(KVCacheConfig(16000, 16), 100, 128)
    assert q == pytest.approx(1000 / 1383)
    assert q == pytest.approx(0.7231, abs=1e-4)


@pytest.mark.parametrize("p,g", [(1, 1), (100, 128), (37, 250)])
def test_q_unit_blocks_closed_form(p, g):
    q = stage2.prefill_rate(KVCacheConfig(5000, 1), p, g)
    assert q == pytest.approx(5000 / ((g + 1) * (p + g / 2)))


def test_q_infeasible():
    with pytest.raises(InfeasibleWorkloadError):
        stage2.prefill_rate(KVCacheConfig(160, 16), 100, 128)


def test_q_nonincreasing_in_block_size():
    qs = [stage2.prefill_rate(KVCacheConfig(1600 * 16, b), 100, 128) for b in (1, 2, 4, 8, 16)]
    # same token capacity, larger blocks waste more
    assert all(b <= a + 1e-12 for a, b in zip(qs, qs[1:]))


def test_t1_identities():
    g, q, d = 128, 0.7231, 4.82
    assert stage2.t1_memory_bound(1e12, g, q, d) == pytest.approx(g * q / d, rel=1e-6)
    assert stage2.t1_memory_bound(g * q, g, q, d) == pytest.approx(g * q / (2 * d))
    for K in (1, 100, 20000):
        assert stage2.t1_memory_bound(K, g, q, d) == pytest.approx(stage2.t1_memory_bound_factored(K, g, q, d))


def test_t1_example_against_step_oracle():
    t1 = stage2.t1_memory_bound(20000, 128, 0.7231, 4.82)
    assert t1 == pytest.approx(19.11, abs=0.01)
    assert t1 == pytest.approx(step_t1(20000, 128, 0.7231, 4.82), rel=1e-3)


def test_t2_example_against_ledger():
    t2, it = stage2.t2_gpu_bound(20000, 100, 128, 18750, 4.82)
    assert it == pytest.approx(289.28, abs=0.01)
    assert t2 == pytest.approx(1836, abs=1)
    # the linear prologue ramp sits between perfect packing and a greedy ledger
    # whose first-iteration burst keeps decode load oscillating
    assert 20000 * 228 / 18750 < it < ledger_iterations(20000, 100, 128, 18750)


def test_t2_even_split():
    # p = g puts half of every steady iteration into prefill
    _, it = stage2.t2_gpu_bound(10**6, 64, 64, 1000, 1.0)
    assert it == pytest.approx(2 * 64 + (64e6 - 750 * 64) / 500)


def test_t2_preconditions():
    with pytest.raises(stage2.NotGpuBoundError):
        stage2.t2_gpu_bound(10, 100, 128, 18750, 4.82)
    with pytest.raises(stage2.NotGpuBoundError):
        stage2.t2_gpu_bound(20000, 100, 128, 18750, 4.82, q=1.0)
    with pytest.raises(stage2.NotGpuBoundError):
        stage2.t2_gpu_bound(20000, 100, 0, 18750, 4.82)


def test_truncated_prologue_matches_full_formula_at_boundary():
    p, g, tg = 100, 128, 18750.0
    boundary = (tg * p / (p + g) + tg) / 2 * g / p
    full, it_full = stage2.t2_gpu_bound(boundary * (1 + 1e-9), p, g, tg, 1.0)
    cut, it_cut = stage2.t2_truncated_prologue(boundary, p, g, tg, 1.0)
    assert it_cut == pytest.approx(2 * g)
    assert cut == pytest.approx(full, rel=1e-6)
    _, it_small = stage2.t2_truncated_prologue(100, p, g, tg, 1.0)
    assert g < it_small < g + 1


def test_predict_converges_to_stage1():
    m, hw = mixtral(), hardware(gpu_flops=150e12, cpu_mem_bandwidth=100e9)
    rep = stage2.predict(hw, m, KVCacheConfig(10**10, 1), 100, 128, 10**6)
    s1, u1 = stage1.t_max(hw, m, 10**10, 100, 128)
    assert rep.predicted_throughput * 228 / 128 == pytest.approx(s1, rel=0.02)
    assert rep.predicted_utilization == pytest.approx(u1, rel=0.02)


def test_predict_memory_bound_regime():
    m, hw = mixtral(), hardware()
    rep = stage2.predict(hw, m, KVCacheConfig(16000, 16), 100, 128, 200)
    assert rep.regime is stage2.Regime.MEMORY_BOUND
    assert rep.predicted_throughput == rep.t1
    assert rep.t2 is None
    assert rep.as_dict()["regime"] == "MemoryBound"


def test_predict_monotone():
    m, hw = mixtral(), hardware(gpu_flops=150e12, cpu_mem_bandwidth=100e9)
    for b in (1, 16):
        for cap in (5_000, 200_000, 5_000_000, 50_000_000):
            ts = [stage2.predict(hw, m, KVCacheConfig(cap, b), 100, 128, K).predicted_throughput
                  for K in np.geomspace(10, 1e7, 60)]
            assert all(y >= x * (1 - 1e-12) for x, y in zip(ts, ts[1:])), (b, cap)
        for K in (2000, 20000, 200000):
            us = stage2.utilization_vs_capacity(hw, m, 100, 128, K, b, np.geomspace(300, 1e8, 80))
            us = us[np.isfinite(us)]
            assert np.all(np.diff(us) >= -1e-12)
            assert np.all(us <= 1.0)


def test_paged_blocks_never_beat_unit_blocks():
    m, hw = mixtral(), hardware(gpu_flops=150e12, cpu_mem_bandwidth=100e9)
    caps = np.linspace(1e4, 2e7, 50)
    u1 = stage2.utilization_vs_capacity(hw, m, 100, 128, 20000, 1, caps)
    u16 = stage2.utilization_vs_capacity(hw, m, 100, 128, 20000, 16, caps)
    assert np.all(u16 <= u1 + 1e-12)


def test_asymptote_matches_gpu_bound_formula():
    m, hw = mixtral(), hardware(gpu_flops=150e12, cpu_mem_bandwidth=100e9)
    K, p, g = 200000, 100, 128
    rep = stage2.predict(hw, m, KVCacheConfig(10**12, 1), p, g, K)
    t2, _ = stage2.t2_gpu_bound(K, p, g, rep.t_gpu * rep.delta, rep.delta)
    assert rep.predicted_throughput == pytest.approx(min(t2, rep.t_gpu * g / (p + g)))


def test_capacity_to_reach():
    caps = [0, 10, 20]
    assert stage2.capacity_to_reach(caps, [0.0, 0.5, 1.0], 0.75) == pytest.approx(15)
    assert stage2.capacity_to_reach(caps, [0.0, 0.5, 1.0], 2.0) == math.inf
