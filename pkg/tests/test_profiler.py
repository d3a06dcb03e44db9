import pytest

from conftest import hardware, mixtral
from moesim import profiler


def test_exact_line_gives_700():
    samples = [(x, 2e-4 * x + 0.01) for x in (100, 400, 1600, 3200)]
    fit = profiler.profiler_fit(samples, 0.15)
    assert fit.n_real == 700
    assert fit.slope == pytest.approx(2e-4)
    assert fit.intercept == pytest.approx(0.01)


def test_identical_x_is_an_error():
    with pytest.raises(profiler.ProfilerFitError):
        profiler.line_fit([(100, 0.1), (100, 0.2)])
    with pytest.raises(profiler.ProfilerFitError):
        profiler.line_fit([(100, 0.1)])


def test_nonpositive_slope_is_an_error():
    with pytest.raises(profiler.ProfilerFitError):
        profiler.profiler_fit([(100, 0.2), (200, 0.1)], 0.15)


def test_noise_free_samples_on_line():
    hw, m = hardware(), mixtral()
    per_token = m.flops_per_token_layer() / hw.gpu_flops
    for x, y in profiler.synthesize_profile_samples(hw, m, noise=0.0):
        assert y == pytest.approx(per_token * x)


def test_same_seed_same_samples():
    hw, m = hardware(), mixtral()
    a = profiler.synthesize_profile_samples(hw, m, seed=3)
    b = profiler.synthesize_profile_samples(hw, m, seed=3)
    c = profiler.synthesize_profile_samples(hw, m, seed=4)
    assert a == b and a != c


def test_profile_n_real_near_analytic():
    hw, m = hardware(), mixtral()
    fit = profiler.profile(hw, m, noise=0.0)
    analytic = profiler.per_layer_weight_io(hw, m) / (m.flops_per_token_layer() / hw.gpu_flops)
    assert fit.n_real == int(analytic)
    assert fit.n_real == 14237
    assert profiler.profile(hw, m, seed=0).n_real == 14007
