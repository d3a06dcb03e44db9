import pytest

from moesim.core import HardwareProfile, ModelConfig

MIXTRAL_EXTRA = 2 * 32000 * 4096 * 2  # embedding + LM head, BF16


def mixtral(extra=MIXTRAL_EXTRA, **kw) -> ModelConfig:
    base = dict(
        num_layers=32,
        hidden_dim=4096,
        intermediate_dim=14336,
        num_experts=8,
        top_k=2,
        gqa_group=4,
        kv_heads=8,
        head_dim=128,
        dtype_bytes=2,
        extra_weight_bytes=float(extra),
    )
    base.update(kw)
    return ModelConfig(**base)


def hardware(**kw) -> HardwareProfile:
    base = dict(
        gpu_flops=75e12,
        io_bandwidth=19.5e9,
        cpu_mem_bandwidth=45e9,
        cpu_attn_throughput=2e7,
        gpu_mem_capacity=48e9,
        cpu_mem_capacity=512e9,
    )
    base.update(kw)
    return HardwareProfile(**base)


@pytest.fixture
def model():
    return mixtral()


@pytest.fixture
def hw():
    return hardware()


@pytest.fixture
def a40():
    return hardware(gpu_flops=150e12, cpu_mem_bandwidth=100e9)


# -- acceptance reporting -------------------------------------------------

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _RESULTS[n] = (title, "PASS" if rep.passed else "FAIL", rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, status, dur = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title} ({dur:.2f}s)")
