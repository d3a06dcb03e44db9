import math

import numpy as np
import pytest

from conftest import hardware, mixtral
from moesim import stage1
from moesim.core import InfeasibleWorkloadError, model_bytes


def test_intensity_full_form():
    # 1000 * (6*3.5*2 + 4 + 1) / (6*3.5*8 + 4 + 1)
    assert stage1.gemm_intensity(mixtral(), 1000) == pytest.approx(1000 * 47 / 173)
    assert stage1.gemm_intensity(mixtral(), 1000) == pytest.approx(271.68, abs=0.01)


def test_intensity_dense_limit():
    dense = mixtral(num_experts=2, top_k=2)
    assert stage1.gemm_intensity(dense, 1) == pytest.approx(1.0)
    assert stage1.gemm_intensity_approx(dense, 7) == 7


@pytest.mark.parametrize("m_ratio", [3.0, 3.5, 5.0, 8.0])
def test_full_over_approx_ratio_bounded(m_ratio):
    model = mixtral(intermediate_dim=int(4096 * m_ratio))
    r = stage1.gemm_intensity(model, 1000) / stage1.gemm_intensity_approx(model, 1000)
    assert 1.0 <= r <= 1.5


def test_intensity_rejects_zero_tokens():
    with pytest.raises(ValueError):
        stage1.gemm_intensity(mixtral(), 0)


@pytest.mark.parametrize("tflops,approx", [(150, 18750), (181, 22625), (312, 39000)])
def test_saturation_tokens(tflops, approx):
    hw = hardware(gpu_flops=tflops * 1e12, io_bandwidth=32e9, cpu_mem_bandwidth=100e9)
    sat = stage1.saturation_tokens(hw, mixtral())
    assert sat.approx == approx
    # the exact form crosses the ridge at the returned count and not before
    ridge = hw.gpu_flops / hw.io_bandwidth
    assert stage1.gemm_intensity(mixtral(), sat.exact) >= ridge
    assert stage1.gemm_intensity(mixtral(), sat.exact - 1) < ridge
    assert sat.relative_gap == pytest.approx(abs(sat.exact - sat.approx) / sat.exact)


def test_saturation_dense_limit():
    hw = hardware(gpu_flops=150e12, io_bandwidth=32e9, cpu_mem_bandwidth=100e9)
    sat = stage1.saturation_tokens(hw, mixtral(num_experts=2, top_k=2))
    assert sat.approx == math.ceil(150e12 / 32e9)


def test_pme_values():
    assert stage1.pme(100, 128) == pytest.approx(456 / 41984)
    assert stage1.pme(1, 1) == pytest.approx(4 / 3)
    for p in (1, 7, 300):
        assert stage1.pme(p, 1) == pytest.approx(2 * (p + 1) / (2 * p + 1))


@pytest.mark.parametrize("p,g", [(1, 1), (10, 5), (100, 128), (1000, 32)])
def test_pme_closed_form_vs_discrete_sum(p, g):
    exact = stage1.pme_exact(p, g)
    closed = stage1.pme(p, g)
    assert abs(closed - exact) / exact == pytest.approx(1 / (2 * p + g), rel=1e-9)


def test_pme_rejects_g_zero():
    with pytest.raises(ValueError):
        stage1.pme(10, 0)


def test_weight_transfer_time():
    hw = hardware()
    m = mixtral()
    assert stage1.weight_transfer_time(hw, m) == pytest.approx(model_bytes(m) / 19.5e9)
    # 94 GB and 282 GB models
    assert 94e9 / hw.io_bandwidth == pytest.approx(4.82, abs=0.005)
    assert 282e9 / hw.io_bandwidth == pytest.approx(14.46, abs=0.005)
    unit = hardware(io_bandwidth=model_bytes(m), cpu_mem_bandwidth=2 * model_bytes(m))
    assert stage1.weight_transfer_time(unit, m) == pytest.approx(1.0)


def test_t_max_limits():
    hw, m = hardware(), mixtral()
    bound, util = stage1.t_max(hw, m, 1e15, 100, 128)
    assert bound == stage1.t_gpu(hw, m) and util == 1.0
    with pytest.raises(InfeasibleWorkloadError):
        stage1.t_max(hw, m, 100, 100, 128)


def test_t_max_half_utilization():
    hw, m = hardware(), mixtral()
    p, g = 100, 128
    delta = stage1.weight_transfer_time(hw, m)
    cap = stage1.t_gpu(hw, m) / 2 * delta / stage1.pme(p, g)
    _, util = stage1.t_max(hw, m, cap, p, g)
    assert util == pytest.approx(0.5)


def test_t_max_monotone_in_capacity():
    hw, m = hardware(), mixtral()
    caps = np.geomspace(300, 1e8, 50)
    utils = [stage1.t_max(hw, m, c, 100, 128)[1] for c in caps]
    assert all(b >= a for a, b in zip(utils, utils[1:]))


def test_required_bandwidths():
    m = mixtral()
    hw = hardware()
    b_mem, b_kv = stage1.required_bandwidths(hw, m, model_bytes(m))
    assert b_mem == pytest.approx(39e9)
    b_mem, b_kv = stage1.required_bandwidths(hw, m, 0)
    assert b_mem == hw.io_bandwidth and b_kv == 0


def test_required_cpu_attn_throughput():
    m = mixtral()
    assert stage1.required_cpu_attn_throughput(m, 40e9, 2.0) == pytest.approx(640e9)
    assert stage1.required_cpu_attn_throughput(m, 0.0) == 0.0
    with pytest.raises(ValueError):
        stage1.required_cpu_attn_throughput(m, -1.0)


def test_effective_kv_capacity():
    assert stage1.effective_kv_capacity(100, 128, 1.0) == pytest.approx(228 / 164)
    assert stage1.effective_kv_capacity(100, 0, 5.0) == pytest.approx(5.0)
    for p in (1, 10, 1000):
        assert stage1.effective_kv_capacity(p, 10**6, 1.0) < 2.0


def test_utilization_surface():
    hw, m = hardware(), mixtral()
    ps, gs = [10, 100, 1000], [16, 128, 512]
    grid = stage1.utilization_surface(hw, m, 600, None, ps, gs)
    assert grid.shape == (3, 3)
    assert math.isnan(grid[2, 0])  # 1016 tokens exceed 600
    assert np.nanmax(grid) <= 1.0 and np.nanmin(grid) > 0
    with pytest.raises(ValueError):
        stage1.utilization_surface(hw, m, 600, None, [], gs)


def test_stage1_report_fields():
    rep = stage1.stage1_report(hardware(), mixtral(), 500_000, 100, 128)
    d = rep.as_dict()
    assert d["saturation_tokens"] >= 1
    assert 0 < d["utilization"] <= 1
