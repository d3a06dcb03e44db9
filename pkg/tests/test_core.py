import pytest

from conftest import MIXTRAL_EXTRA, mixtral
from moesim.core import (
    ConfigError,
    HardwareProfile,
    KVCacheConfig,
    WorkloadSpec,
    dump_scenario,
    flops_per_token,
    kv_bytes_per_token,
    load_scenario,
    model_bytes,
    parse_quantity,
)

SCENARIO = """
hardware:
  gpu_flops: 75e12
  io_bandwidth: 19.5GB/s
  cpu_mem_bandwidth: 45e9
  cpu_attn_throughput: 2e7
  gpu_mem_capacity: 48GB
  cpu_mem_capacity: 512GB
model:
  num_layers: 32
  hidden_dim: 4096
  intermediate_dim: 14336
  num_experts: 8
  top_k: 2
  gqa_group: 4
  kv_heads: 8
  head_dim: 128
kv_cache:
  capacity_tokens: 1600
  block_size: 16
workload:
  sequences: [[100, 28], [50, 10]]
"""


def test_model_bytes_close_to_94gb():
    assert abs(model_bytes(mixtral()) - 94e9) / 94e9 <= 0.05
    # frozen: 32 * (3*8*4096*14336 + 2*4096^2 + 2*4096^2/4) * 2 + embedding/head
    assert model_bytes(mixtral()) == pytest.approx(93_400_000_000 + 0.0, rel=1e-3)
    assert model_bytes(mixtral(extra=0)) + MIXTRAL_EXTRA == model_bytes(mixtral())


def test_model_bytes_linear_in_layers():
    a = model_bytes(mixtral(extra=0, num_layers=16))
    b = model_bytes(mixtral(extra=0, num_layers=32))
    assert b == pytest.approx(2 * a)


def test_kv_bytes_per_token():
    assert kv_bytes_per_token(mixtral()) == 131072
    tiny = mixtral(num_layers=1, kv_heads=1, head_dim=1, dtype_bytes=1, hidden_dim=1, gqa_group=1,
                   intermediate_dim=1, num_experts=1, top_k=1)
    assert kv_bytes_per_token(tiny) == 2


def test_kv_to_saturate_total():
    # 19,200 tokens of 256-token sequences
    assert 19200 * 256 * kv_bytes_per_token(mixtral()) / 1e9 == pytest.approx(644.2, rel=1e-3)


def test_flops_per_token_is_twice_active_params():
    m = mixtral(extra=0)
    h, hi = 4096, 14336
    active = h * h * (2 + 2 / 4) + 3 * 2 * h * hi
    assert flops_per_token(m) == pytest.approx(32 * 2 * active)


def test_num_blocks():
    assert KVCacheConfig(1600, 16).num_blocks == 100
    kv = KVCacheConfig(1615, 16)
    assert kv.num_blocks * 16 <= 1615 < (kv.num_blocks + 1) * 16


def test_top_k_invariant():
    with pytest.raises(ConfigError, match="top_k exceeds num_experts"):
        mixtral(top_k=9)


def test_hardware_rejects_nonpositive():
    with pytest.raises(ConfigError):
        HardwareProfile(0, 1, 2, 1, 1, 1)


def test_workload_rejects_zero_lengths():
    with pytest.raises(ConfigError):
        WorkloadSpec((0,), (1,))
    with pytest.raises(ConfigError):
        WorkloadSpec((), ())


@pytest.mark.parametrize("text,value", [("19.5GB/s", 19.5e9), ("75e12", 75e12), ("100MB", 100e6),
                                        ("1KiB", 1024), (3, 3.0), ("150 TFLOPS", 150e12)])
def test_parse_quantity(text, value):
    assert parse_quantity(text) == pytest.approx(value)


def test_parse_quantity_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_quantity("fast")


def test_load_scenario_and_round_trip():
    sc = load_scenario(SCENARIO)
    assert sc.kv_cache.num_blocks == 100
    assert sc.workload.batch_size == 2
    assert sc.hardware.io_bandwidth == 19.5e9
    again = load_scenario(dump_scenario(sc))
    assert again.hardware == sc.hardware
    assert again.model == sc.model
    assert again.kv_cache == sc.kv_cache
    assert again.workload == sc.workload


def test_overrides():
    sc = load_scenario(SCENARIO, ["kv_cache.block_size=8", "model.top_k=1"])
    assert sc.kv_cache.block_size == 8
    assert sc.model.top_k == 1


def test_missing_key_reports_path():
    with pytest.raises(ConfigError, match="model.hidden_dim"):
        load_scenario(SCENARIO.replace("  hidden_dim: 4096\n", ""))


def test_invalid_value_reports_path():
    with pytest.raises(ConfigError, match="hardware.io_bandwidth"):
        load_scenario(SCENARIO.replace("19.5GB/s", "-1"))
