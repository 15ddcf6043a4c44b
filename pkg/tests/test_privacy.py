import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hierfedcea.privacy import (DpConfig, PrivacyConfigError, PrivacyLedger, clip, excess_risk_bound,
                                gaussianize, rdp_epsilon, rdp_epsilon_analytic, solve_z)

vectors = arrays(np.float64, 18, elements=st.floats(-1e3, 1e3))


def test_clip_examples():
    v = np.array([0.3, 0.4])  # norm 0.5
    assert np.array_equal(clip(v, 1.0), v)
    w = clip(np.array([1.2, 1.6]), 1.0)
    assert np.linalg.norm(w) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(PrivacyConfigError):
        clip(v, 0.0)


@given(vectors, st.floats(1e-3, 100))
def test_clip_bounded_idempotent_and_aligned(v, c):
    w = clip(v, c)
    assert np.linalg.norm(w) <= c * (1 + 1e-12)
    np.testing.assert_allclose(clip(w, c), w, rtol=1e-12, atol=1e-300)
    if np.linalg.norm(v) > 0:
        assert float(np.dot(w, v)) >= 0


def test_gaussianize_identity_and_replay():
    v = np.arange(5.0)
    assert np.array_equal(gaussianize(v, 0.0, 1.0, np.random.default_rng(0)), v)
    a = gaussianize(v, 1.0, 1.0, np.random.default_rng(9))
    b = gaussianize(v, 1.0, 1.0, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_gaussianize_moment():
    rng = np.random.default_rng(0)
    draws = np.array([gaussianize(np.zeros(1), 1.0, 1.0, rng)[0] for _ in range(100_000)])
    assert draws.std() == pytest.approx(1.0, rel=0.02)


def test_noise_std_conventions():
    assert DpConfig(clip_c=2.0, sensitivity="clip").noise_std(1.5, 400) == 3.0
    assert DpConfig(clip_c=2.0, sensitivity="per_sample").noise_std(1.5, 400) == pytest.approx(3.0 / 400)
    with pytest.raises(PrivacyConfigError):
        DpConfig(sensitivity="other")


def _brute_force_eps(z, rounds, delta):
    # dense independent minimization over the same alpha range
    a = np.geomspace(1.25, 512.0, 2_000_001)
    return float(np.min(rounds * a / (2 * z * z) + math.log(1 / delta) / (a - 1)))


def test_accountant_matches_analytic_minimum():
    rng = np.random.default_rng(0)
    pairs = [(10.0, 1)] + [(float(rng.uniform(0.5, 20)), int(rng.integers(1, 500))) for _ in range(19)]
    for z, t in pairs:
        eps = rdp_epsilon(z, t, 1.0, 1e-5)
        assert eps == pytest.approx(rdp_epsilon_analytic(z, t, 1e-5), rel=1e-6)
        assert eps == pytest.approx(_brute_force_eps(z, t, 1e-5), rel=1e-6)


@given(st.floats(0.3, 50), st.floats(1.01, 3), st.integers(1, 1000))
def test_accountant_monotone_in_z(z, factor, t):
    assert rdp_epsilon(z * factor, t) < rdp_epsilon(z, t)


@given(st.floats(0.3, 50), st.integers(1, 1000), st.integers(1, 100))
def test_accountant_monotone_in_rounds(z, t, extra):
    assert rdp_epsilon(z, t + extra) > rdp_epsilon(z, t)


def test_accountant_sentinels_and_errors():
    assert rdp_epsilon(0.0, 10) == math.inf
    with pytest.raises(PrivacyConfigError):
        rdp_epsilon(1.0, 10, q=0.5)
    with pytest.raises(PrivacyConfigError):
        rdp_epsilon(1.0, 0)


def test_accountant_value_at_unit_noise_hundred_rounds():
    # full-participation Gaussian RDP composed 100 times at z = 1; far above single digits
    eps = rdp_epsilon(1.0, 100, 1.0, 1e-5)
    assert eps == pytest.approx(rdp_epsilon_analytic(1.0, 100, 1e-5), rel=1e-9)
    assert 97.9 < eps < 98.1


@pytest.mark.parametrize("target", [0.5, 1.0, 4.0, 16.0])
def test_solve_z_inverts_accountant(target):
    z = solve_z(target, 120)
    assert rdp_epsilon(z, 120) <= target
    assert rdp_epsilon(z * (1 - 1e-6), 120) > target
    assert solve_z(math.inf, 120) == 0.0


def test_excess_risk_bound():
    v = excess_risk_bound(17, 1e-5, 10000, 3.8)
    assert 0.0013 <= v <= 0.0015
    assert v == pytest.approx(0.0013554, rel=1e-4)
    assert excess_risk_bound(17, 1e-5, 20000, 3.8) == pytest.approx(v / 2)
    assert excess_risk_bound(18, 1e-5, 10000, 8) == pytest.approx(18 * math.log(1e5) / 640000)
    with pytest.raises(PrivacyConfigError):
        excess_risk_bound(0, 1e-5, 1, 1)


def test_ledger_tracks_tiers():
    led = PrivacyLedger(z_g=1.0, z_c=2.0)
    for _ in range(5):
        led.record()
    led.record(tier_g=False)
    assert (led.rounds_g, led.rounds_c) == (5, 6)
    assert led.eps_g == rdp_epsilon(1.0, 5)
    assert led.eps_c == rdp_epsilon(2.0, 6)
