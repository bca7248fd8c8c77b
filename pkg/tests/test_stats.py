import math

import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import given, settings, strategies as st

from bou_lab.errors import SampleSizeError
from bou_lab.rng import fixed_stream
from bou_lab.stats import (correlation_matrix, distance_correlation, kolmogorov_cdf,
                           kolmogorov_quantile, ks_distance, ks_statistic,
                           ks_two_sample, mean_and_se, normal_cdf, variance_and_se)


def test_kolmogorov_cdf_matches_scipy():
    for x in np.linspace(0.05, 3.0, 60):
        assert 1.0 - kolmogorov_cdf(x) == pytest.approx(scipy.special.kolmogorov(x),
                                                        abs=1e-11)


def test_kolmogorov_quantile_round_trip():
    for q in (0.5, 0.9, 0.95, 0.99, 0.999):
        assert kolmogorov_cdf(kolmogorov_quantile(q)) == pytest.approx(q, abs=1e-10)


def test_ks_distance_bounds():
    rng = fixed_stream(1)
    samples = rng.random(500)
    d = ks_distance(samples, lambda x: min(max(x, 0.0), 1.0))
    assert 0.0 <= d <= 1.0


def test_ks_distance_degenerate_samples():
    # Constant samples against a continuous cdf: distance >= 0.5.
    d = ks_distance(np.full(100, 0.3), lambda x: normal_cdf(x, 0.0, 1.0))
    assert d >= 0.5


def test_ks_distance_perfect_grid():
    # Quantile grid of the target law: distance is 1/(2n).
    n = 200
    grid = (np.arange(1, n + 1) - 0.5) / n
    d = ks_distance(grid, lambda x: min(max(x, 0.0), 1.0))
    assert d == pytest.approx(1.0 / (2 * n), abs=1e-12)


def test_ks_statistic_matches_scipy_decision():
    rng = fixed_stream(3)
    samples = rng.standard_normal(800)
    res = ks_statistic(samples, lambda x: normal_cdf(x, 0.0, 1.0), significance=0.01)
    ref = scipy.stats.kstest(samples, "norm")
    assert res.distance == pytest.approx(ref.statistic, abs=1e-12)
    assert not res.rejects


def test_ks_requires_minimum_samples():
    with pytest.raises(SampleSizeError):
        ks_statistic(np.zeros(10), lambda x: x)


def test_ks_self_calibration():
    # False-rejection rate on null data matches the significance within a
    # binomial 4 SE band over 500 trials.
    alpha = 0.01
    trials = 500
    rejections = 0
    for trial in range(trials):
        rng = fixed_stream(10_000 + trial)
        samples = rng.random(400)
        res = ks_statistic(samples, lambda x: min(max(x, 0.0), 1.0), significance=alpha)
        rejections += int(res.rejects)
    se = math.sqrt(trials * alpha * (1 - alpha))
    assert abs(rejections - trials * alpha) <= 4 * se


def test_two_sample_ks_identical_and_shifted():
    rng = fixed_stream(5)
    a = rng.standard_normal(1000)
    b = rng.standard_normal(1000)
    assert not ks_two_sample(a, b, 0.01).rejects
    assert ks_two_sample(a, b + 2.0, 0.01).rejects
    assert ks_two_sample(a, a, 0.01).distance == 0.0


def test_verdict_monotone_in_significance():
    # A smaller significance level only raises the critical value, so a
    # passing KS verdict can never flip to failing when alpha is lowered.
    rng = fixed_stream(9)
    samples = rng.random(300)
    res_1 = ks_statistic(samples, lambda x: min(max(x, 0.0), 1.0), significance=0.05)
    res_2 = ks_statistic(samples, lambda x: min(max(x, 0.0), 1.0), significance=0.005)
    assert res_2.threshold_at_significance > res_1.threshold_at_significance
    if not res_1.rejects:
        assert not res_2.rejects


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.001, 0.2), factor=st.floats(0.1, 0.9))
def test_threshold_monotonicity_property(alpha, factor):
    tighter = alpha * factor
    assert kolmogorov_quantile(1 - tighter) >= kolmogorov_quantile(1 - alpha)


def test_mean_and_variance_helpers():
    xs = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    m, se = mean_and_se(xs)
    assert m == 3.0
    assert se == pytest.approx(np.std(xs, ddof=1) / math.sqrt(5), rel=1e-12)
    var, vse = variance_and_se(xs)
    assert var == pytest.approx(2.5, rel=1e-12)
    assert vse > 0


def test_correlation_matrix_shape():
    rng = fixed_stream(11)
    a, b, c = rng.standard_normal((3, 400))
    corr = correlation_matrix([a, b, a + b])
    assert corr.shape == (3, 3)
    assert np.allclose(np.diag(corr), 1.0)


def test_distance_correlation_detects_dependence():
    rng = fixed_stream(13)
    x = rng.standard_normal(600)
    y = rng.standard_normal(600)
    assert distance_correlation(x, y) < 0.1
    assert distance_correlation(x, x * x) > 0.3
