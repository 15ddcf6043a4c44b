import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hierfedcea.metrics import (MetricError, RolloutTrace, cold_start_days, energy_kwh_m2_day,
                                energy_reduction_pct, mean_ci, overshoot_pct, paired_wilcoxon, rmse_vpd,
                                rounds_to_convergence, vpd_sigma, worst_case_rmse)


def trace(actual, target=None, power=0.0, area=100.0, dt=10.0):
    actual = np.asarray(actual, dtype=float)
    target = np.full_like(actual, 1.0) if target is None else np.asarray(target, dtype=float)
    n = len(actual)
    p = np.full(n, float(power))
    return RolloutTrace(dt * np.arange(n), actual, target, p, np.zeros(n), area)


def test_rmse_examples():
    assert rmse_vpd(trace([1.0, 1.0])) == 0.0
    assert rmse_vpd(trace([0.9] * 5)) == pytest.approx(0.1)
    assert rmse_vpd(trace([0.7, 0.6])) == pytest.approx(math.sqrt(0.125))
    with pytest.raises(MetricError):
        rmse_vpd(trace([]))


def test_sigma_examples():
    assert vpd_sigma(trace([0.8] * 10)) == 0.0
    alt = np.tile([1.0, 1.2], 50)
    # 50 deviations of +-0.1 around the mean, divided by n - 1
    assert vpd_sigma(trace(alt)) == pytest.approx(math.sqrt(100 * 0.01 / 99), rel=1e-12)
    assert vpd_sigma(trace(alt)) == pytest.approx(0.1005, abs=1e-4)
    with pytest.raises(MetricError):
        vpd_sigma(trace([1.0]))


@given(st.lists(st.floats(0, 3), min_size=2, max_size=40), st.floats(-1, 1))
def test_sigma_offset_invariant(vals, c):
    assert vpd_sigma(trace(np.array(vals) + c)) == pytest.approx(vpd_sigma(trace(vals)), abs=1e-9)


def test_overshoot_examples():
    tgt = [1.0, 1.0, 1.2, 1.2, 1.2, 1.2]
    assert overshoot_pct(trace([1.0, 1.0, 1.05, 1.1, 1.15, 1.2], tgt)).pct == 0.0
    assert overshoot_pct(trace([1.0, 1.0, 1.1, 1.25, 1.2, 1.2], tgt)).pct == pytest.approx(25.0)
    down = [1.2, 1.2, 1.0, 1.0, 1.0]
    assert overshoot_pct(trace([1.2, 1.2, 1.1, 0.95, 1.0], down)).pct == pytest.approx(25.0)
    flat = overshoot_pct(trace([1.0, 1.1]))
    assert flat == (0.0, 0)


def test_energy_examples():
    assert energy_kwh_m2_day(trace([1.0] * 10)) == 0.0
    day = trace(np.ones(8640), power=1000.0, area=100.0)
    assert energy_kwh_m2_day(day) == pytest.approx(0.24)
    big = trace(np.ones(8640), power=1000.0, area=200.0)
    assert energy_kwh_m2_day(big) == pytest.approx(0.12)
    assert energy_reduction_pct(day, day) == 0.0
    assert energy_reduction_pct(0.75, 1.0) == pytest.approx(25.0)


def test_trace_validation():
    with pytest.raises(MetricError):
        RolloutTrace(np.arange(3.0), np.ones(2), np.ones(3), np.zeros(3), np.zeros(3), 1.0)
    with pytest.raises(MetricError):
        RolloutTrace(np.arange(3.0), np.ones(3), np.ones(3), -np.ones(3), np.zeros(3), 1.0)


def test_rounds_to_convergence():
    series = [0.3] * 51 + [0.09] * 20
    assert rounds_to_convergence(series) == 52
    assert rounds_to_convergence([0.3, 0.05, 0.3, 0.05, 0.05, 0.05]) == 4
    assert rounds_to_convergence([0.3] * 10) is None


def test_worst_case_and_cold_start():
    assert worst_case_rmse([0.05, 0.2, 0.1]) == 0.2
    daily = [0.2] * 13 + [0.068 / 0.85] + [0.07] * 5
    assert cold_start_days(daily, 0.068) == 14
    assert cold_start_days([0.5] * 5, 0.068) is None


def test_wilcoxon_examples():
    a = np.arange(12.0)
    assert paired_wilcoxon(a, a) == 1.0
    assert paired_wilcoxon(a + 5, a) < 0.01
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=15), rng.normal(size=15)
    assert paired_wilcoxon(x, y) == pytest.approx(paired_wilcoxon(y, x))
    with pytest.raises(MetricError):
        paired_wilcoxon(a[:5], a[:5])


@settings(max_examples=40, deadline=None)
@given(st.integers(6, 19), st.integers(0, 10_000))
def test_wilcoxon_exact_matches_scipy(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n), rng.normal(size=n)
    want = stats.wilcoxon(a, b, method="exact").pvalue
    assert paired_wilcoxon(a, b) == pytest.approx(want, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(20, 60), st.integers(0, 10_000))
def test_wilcoxon_normal_matches_scipy(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n), rng.normal(size=n)
    want = stats.wilcoxon(a, b, method="approx", correction=False).pvalue
    assert paired_wilcoxon(a, b) == pytest.approx(want, rel=1e-9)


def test_mean_ci():
    m, h = mean_ci([1.0, 2.0, 3.0])
    assert m == 2.0
    assert h == pytest.approx(stats.t.ppf(0.975, 2) * 1.0 / math.sqrt(3))
    assert math.isnan(mean_ci([4.0])[1])
