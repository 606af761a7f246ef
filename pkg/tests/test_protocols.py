import math

import numpy as np
import pytest
from scipy import integrate

from sgdlab import (ConfigError, MisuseError, ProtocolKind, ProtocolSpec,
                    alpha_variance, rate_at_epoch, rate_trace, sample_alpha,
                    sample_alphas)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_constant_alpha_is_one_and_consumes_no_randomness():
    spec = ProtocolSpec.constant(0.01)
    used, fresh = rng(3), rng(3)
    assert sample_alpha(spec, used) == 1.0
    # the generator was not advanced
    assert used.uniform() == fresh.uniform()


def test_degenerate_random_protocol_consumes_no_randomness():
    spec = ProtocolSpec.random(0.01, 0.0)
    used, fresh = rng(5), rng(5)
    assert sample_alpha(spec, used) == 1.0
    assert sample_alphas(spec, 4, used).tolist() == [1.0] * 4
    assert used.uniform() == fresh.uniform()


def test_full_width_alpha_covers_zero_to_two():
    spec = ProtocolSpec.random(0.01, 1.0)
    draws = sample_alphas(spec, 10_000, rng(1))
    assert draws.min() >= 0.0 and draws.max() <= 2.0
    assert draws.min() < 0.1 and draws.max() > 1.9  # actually spans the range


def test_uniform_variance_matches_independent_quadrature():
    # closed form delta**2 / 3 cross-checked by quadrature of the density
    for delta in (0.25, 0.5, 1.0):
        density = lambda a: 1.0 / (2.0 * delta)
        var, _ = integrate.quad(lambda a: (a - 1.0) ** 2 * density(a),
                                1.0 - delta, 1.0 + delta)
        assert var == pytest.approx(alpha_variance(delta), rel=1e-12)


def test_alpha_moments_at_half_width_half():
    spec = ProtocolSpec.random(0.01, 0.5)
    draws = sample_alphas(spec, 1_000_000, rng(11))
    stderr = (0.5 / math.sqrt(3.0)) / 1000.0
    assert abs(draws.mean() - 1.0) <= 3.0 * stderr
    assert draws.var() == pytest.approx(0.5**2 / 3.0, rel=0.01)
    assert alpha_variance(0.5) == pytest.approx(0.0833333333, rel=1e-8)


def test_sample_alpha_scalar_matches_distribution():
    spec = ProtocolSpec.random(0.01, 1.0)
    g = rng(7)
    draws = np.array([sample_alpha(spec, g) for _ in range(20_000)])
    assert draws.mean() == pytest.approx(1.0, abs=4 * (1 / math.sqrt(3)) / math.sqrt(20_000))
    assert draws.var() == pytest.approx(1.0 / 3.0, rel=0.05)


def test_sample_alpha_rejects_cyclic():
    spec = ProtocolSpec.cyclic(0.01, 6)
    with pytest.raises(MisuseError):
        sample_alpha(spec, rng())
    with pytest.raises(MisuseError):
        sample_alphas(spec, 3, rng())


def test_cyclic_rate_endpoints():
    spec = ProtocolSpec.cyclic(0.005, 6)
    assert rate_at_epoch(spec, 0) == pytest.approx(0.010, abs=1e-15)
    assert rate_at_epoch(spec, 6) == pytest.approx(0.0, abs=1e-15)


def test_cyclic_rate_averages_to_base_rate_over_full_window():
    spec = ProtocolSpec.cyclic(0.005, 6)
    rates = rate_trace(spec, 12)
    assert rates.mean() == pytest.approx(0.005, rel=1e-12)
    # any window of 2P whole epochs averages to l
    for start in range(1, 7):
        window = [rate_at_epoch(spec, t) for t in range(start, start + 12)]
        assert np.mean(window) == pytest.approx(0.005, rel=1e-12)


def test_cyclic_rates_nonnegative_and_periodic():
    for period in (1, 6, 18, 30):
        spec = ProtocolSpec.cyclic(0.005, period)
        for tau in range(3 * period):
            value = rate_at_epoch(spec, tau)
            assert value >= 0.0
            assert value == pytest.approx(rate_at_epoch(spec, tau + 2 * period),
                                          abs=1e-17)


def test_constant_and_random_rates_are_flat():
    assert rate_at_epoch(ProtocolSpec.constant(0.02), 9) == 0.02
    assert rate_at_epoch(ProtocolSpec.random(0.02, 1.0), 9) == 0.02


@pytest.mark.parametrize("bad", [
    dict(kind=ProtocolKind.RANDOM_UNIFORM, base_rate=0.01, half_width=1.5),
    dict(kind=ProtocolKind.RANDOM_UNIFORM, base_rate=0.01, half_width=-0.1),
    dict(kind=ProtocolKind.CYCLIC_COSINE, base_rate=0.01, period=0),
    dict(kind=ProtocolKind.CONSTANT, base_rate=0.0),
    dict(kind=ProtocolKind.CONSTANT, base_rate=-1.0),
])
def test_invalid_specs_rejected(bad):
    with pytest.raises(ConfigError):
        ProtocolSpec(**bad)


def test_labels_are_distinct_and_stable():
    labels = {ProtocolSpec.constant(0.01).label(),
              ProtocolSpec.random(0.01, 1.0).label(),
              ProtocolSpec.random(0.01, 0.5).label(),
              ProtocolSpec.cyclic(0.01, 6).label(),
              ProtocolSpec.cyclic(0.01, 18).label()}
    assert len(labels) == 5
    assert ProtocolSpec.cyclic(0.01, 6).label() == "cyclic_p6"
