import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtncache.duration import (
    DurationParams,
    cf_total_contact_time,
    duration_aware_miss_rate,
    pareto_cdf,
    pareto_cf,
    pareto_from_uniform,
    prob_short_contact_cf,
    prob_short_contact_mc,
    sample_pareto,
    sample_total_contact_time,
    write_duration_csv,
)
from dtncache.errors import InvalidParameterError
from dtncache.optimizer import AllocationVector, NetworkParams, optimal_allocation
from dtncache.popularity import zipf_pmf

from oracles import compound_poisson_pareto_cdf, pareto_cf_closed_form

# --- Pareto durations -------------------------------------------------------


@pytest.mark.parametrize("t, alpha, expected", [(0.0, 2.0, 0.0), (1.0, 1.0, 0.5), (3.0, 2.0, 0.9375), (1.0, 0.5, 1 - 2**-0.5)])
def test_pareto_cdf_examples(t, alpha, expected):
    assert pareto_cdf(t, alpha) == pytest.approx(expected, rel=1e-15, abs=0)


def test_pareto_cdf_rejects_negative_time():
    with pytest.raises(InvalidParameterError):
        pareto_cdf(-0.1, 2.0)
    with pytest.raises(InvalidParameterError):
        pareto_cdf(1.0, 0.0)


@pytest.mark.parametrize("u, alpha, expected", [(0.0, 2.0, 0.0), (0.75, 2.0, 1.0), (0.5, 1.0, 1.0)])
def test_pareto_inverse_cdf_examples(u, alpha, expected):
    assert pareto_from_uniform(u, alpha) == pytest.approx(expected, rel=1e-15)


@given(st.floats(0, 1e6), st.floats(0.1, 10))
def test_pareto_inverse_roundtrip(t, alpha):
    u = pareto_cdf(t, alpha)
    if u < 1 - 1e-9:
        assert pareto_from_uniform(u, alpha) == pytest.approx(t, rel=1e-6, abs=1e-12)


def test_pareto_sample_mean(rng):
    # Lomax(3) has mean 1/2 and variance 3/4.
    x = sample_pareto(3.0, rng, 1_000_000)
    assert abs(x.mean() - 0.5) <= 3 * math.sqrt(0.75 / x.size)
    assert x.min() >= 0


def test_compound_total_mean(rng):
    # Wald: E[S] = rate * E[D] = 2 * 0.5; Var[S] = rate * E[D^2] = 2 * 1.
    s = sample_total_contact_time(2.0, 3.0, rng, 500_000)
    assert abs(s.mean() - 1.0) <= 3 * math.sqrt(2.0 / s.size)
    assert np.mean(s == 0) == pytest.approx(math.exp(-2), abs=4 * math.sqrt(math.exp(-2) / s.size))


def test_compound_total_edge_cases(rng):
    assert np.all(sample_total_contact_time(0.0, 2.0, rng, 100) == 0)
    assert isinstance(sample_total_contact_time(1.0, 2.0, rng), float)
    assert np.all(np.isfinite(sample_total_contact_time(3.0, 2.0, rng, (10, 5))))
    with pytest.raises(InvalidParameterError):
        sample_total_contact_time(-1.0, 2.0, rng)


def test_compound_total_median_infinite_variance(rng):
    # numpy's Generator.pareto draws the same shifted law, so it serves as an independent sampler.
    m = 400_000
    ours = sample_total_contact_time(2.0, 2.0, rng, m)
    other_rng = np.random.default_rng(777)
    counts = other_rng.poisson(2.0, m)
    owner = np.repeat(np.arange(m), counts)
    oracle = np.bincount(owner, weights=other_rng.pareto(2.0, counts.sum()), minlength=m)
    assert np.all(np.isfinite(ours))
    below = np.mean(oracle < np.median(ours))
    # Both the median and the fraction below it carry sqrt(0.25 / m) noise.
    assert abs(below - 0.5) <= 6 * math.sqrt(0.25 / m)


# --- characteristic functions -----------------------------------------------


def test_cf_at_origin_and_zero_rate():
    assert pareto_cf(0.0, 2.0) == 1.0
    assert cf_total_contact_time(0.0, 3.0, 2.0) == pytest.approx(1.0)
    np.testing.assert_allclose(cf_total_contact_time(np.array([0.5, 4.0]), 0.0, 2.0), 1.0)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0, 3.5])
@pytest.mark.parametrize("u", [1e-7, 1e-3, 0.3, 2.0, 40.0, 1e3])
def test_pareto_cf_matches_closed_form(u, alpha):
    assert abs(pareto_cf(u, alpha) - pareto_cf_closed_form(u, alpha)) <= 1e-8


def test_cf_symmetry_and_bound():
    u = np.linspace(0.05, 30, 60)
    phi = pareto_cf(u, 1.5)
    np.testing.assert_allclose(pareto_cf(-u, 1.5), np.conj(phi), atol=1e-14)
    assert np.all(np.abs(phi) <= 1 + 1e-12)
    total = cf_total_contact_time(u, 2.5, 1.5)
    assert np.all(np.abs(total) <= 1 + 1e-12)
    np.testing.assert_allclose(total, np.exp(2.5 * (phi - 1)), rtol=1e-14)


def test_cf_matches_empirical_cf(rng):
    m = 1_000_000
    s = sample_total_contact_time(2.0, 3.0, rng, m)
    empirical = np.mean(np.exp(1j * s))
    assert abs(empirical - cf_total_contact_time(1.0, 2.0, 3.0)) <= 3 / math.sqrt(m)


# --- short-contact probabilities --------------------------------------------


@pytest.mark.parametrize(
    "t0, rate, alpha", [(0.5, 2.0, 2.0), (2.0, 0.5, 0.5), (0.1, 5.0, 2.0), (2.0, 3.0, 3.0), (1.0, 0.05, 1.0)]
)
def test_cf_inversion_matches_convolution(t0, rate, alpha):
    expected = compound_poisson_pareto_cdf(t0, rate, alpha)
    got = prob_short_contact_cf(t0, [rate], alpha, tol=1e-6)[0]
    assert got == pytest.approx(expected, abs=1e-6)


def test_cf_inversion_edge_cases():
    np.testing.assert_array_equal(prob_short_contact_cf(0.0, [0.0, 1.0, 5.0], 2.0), 0.0)
    np.testing.assert_array_equal(prob_short_contact_cf(0.7, [0.0, 0.0], 2.0), 1.0)
    with pytest.raises(InvalidParameterError):
        prob_short_contact_cf(1.0, [-1.0], 2.0)
    with pytest.raises(InvalidParameterError):
        prob_short_contact_cf(-1.0, [1.0], 2.0)


def test_mc_agrees_with_cf():
    rates = np.array([0.3, 1.0, 4.0])
    mc, se = prob_short_contact_mc(0.8, rates, 2.0, 200_000, seed=5)
    cf = prob_short_contact_cf(0.8, rates, 2.0, tol=1e-6)
    assert np.all(np.abs(mc - cf) <= 3 * se)


def test_mc_edge_cases():
    prob, se = prob_short_contact_mc(0.0, [1.0, 0.0], 2.0, 100)
    np.testing.assert_array_equal(prob, 0.0)
    prob, se = prob_short_contact_mc(0.5, [0.0], 2.0, 100)
    assert prob[0] == 1.0 and se[0] == 0.0
    with pytest.raises(InvalidParameterError):
        prob_short_contact_mc(0.5, [1.0], 2.0, 0)


def test_mc_monotone_under_common_random_numbers():
    rates = np.array([0.5, 2.0, 6.0])
    by_t0 = [prob_short_contact_mc(t0, rates, 1.5, 20_000, seed=11)[0] for t0 in (0.05, 0.3, 1.0, 3.0)]
    assert np.all(np.diff(np.array(by_t0), axis=0) >= 0)
    grid = np.linspace(0.1, 8, 12)
    by_rate = [prob_short_contact_mc(0.6, [r], 1.5, 20_000, seed=11)[0][0] for r in grid]
    assert np.all(np.diff(by_rate) <= 0)


def test_cf_monotone_in_t0_and_rate():
    t0s = [0.05, 0.3, 1.0, 3.0]
    by_t0 = [prob_short_contact_cf(t0, [2.0], 2.0)[0] for t0 in t0s]
    assert np.all(np.diff(by_t0) > 0)
    by_rate = prob_short_contact_cf(0.6, np.linspace(0.1, 8, 12), 2.0)
    assert np.all(np.diff(by_rate) < 0)


def test_small_t0_approaches_no_contact_probability():
    rates = np.array([0.2, 1.0, 3.0])
    np.testing.assert_allclose(prob_short_contact_cf(1e-6, rates, 2.0, tol=1e-7), np.exp(-rates), atol=1e-5)


# --- aggregate miss rate ----------------------------------------------------


def _duration_setup(t0, alpha=2.0, lt=5.0):
    dist = zipf_pmf(100, 1.0)
    params = NetworkParams(100, 10, lambda_user=lt)
    alloc, _ = optimal_allocation(dist, params)
    return dist, DurationParams(alpha, t0, params, alloc)


def test_aggregate_limits():
    dist, dp = _duration_setup(0.0)
    for method in ("cf_inversion", "monte_carlo"):
        assert duration_aware_miss_rate(dp, dist, method, n_samples=1000).value == 0.0
    params = NetworkParams(100, 10, lambda_user=5.0)
    empty = DurationParams(2.0, 0.5, params, AllocationVector(np.zeros(100)))
    for method in ("cf_inversion", "monte_carlo"):
        assert duration_aware_miss_rate(empty, dist, method, n_samples=1000).value == 1.0


def test_aggregate_mc_vs_cf():
    dist, dp = _duration_setup(0.5)
    cf = duration_aware_miss_rate(dp, dist, "cf_inversion")
    mc = duration_aware_miss_rate(dp, dist, "monte_carlo", n_samples=100_000, seed=1)
    assert cf.stderr == 0.0 and mc.stderr > 0
    assert abs(mc.value - cf.value) <= 3 * mc.stderr
    assert float(cf) == cf.value
    assert cf.value == pytest.approx(np.dot(dist.probs, cf.per_file))


def test_two_mc_runs_are_consistent():
    dist, dp = _duration_setup(1.0)
    a = duration_aware_miss_rate(dp, dist, "monte_carlo", n_samples=50_000, seed=1)
    b = duration_aware_miss_rate(dp, dist, "monte_carlo", n_samples=50_000, seed=2)
    again = duration_aware_miss_rate(dp, dist, "monte_carlo", n_samples=50_000, seed=1)
    assert a.value == again.value
    assert a.value != b.value
    assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)


@pytest.mark.parametrize("rate", [0.5, 2.0, 5.0])
def test_independent_runs_within_estimator_bound(rate):
    m = 100_000
    a, _ = prob_short_contact_mc(0.7, [rate], 2.0, m, seed=21)
    b, _ = prob_short_contact_mc(0.7, [rate], 2.0, m, seed=22)
    assert abs(a[0] - b[0]) <= 3 / (2 * math.sqrt(m))


def test_parameter_validation():
    dist, dp = _duration_setup(0.5)
    with pytest.raises(InvalidParameterError):
        DurationParams(0.0, 0.5, dp.base, dp.alloc)
    with pytest.raises(InvalidParameterError):
        DurationParams(2.0, -1.0, dp.base, dp.alloc)
    with pytest.raises(InvalidParameterError):
        DurationParams(2.0, 0.5, dp.base, AllocationVector(np.zeros(5)))
    with pytest.raises(InvalidParameterError):
        duration_aware_miss_rate(dp, dist, "quadrature")
    np.testing.assert_allclose(dp.rates, 5.0 * dp.alloc.q)


def test_duration_csv(tmp_path):
    dist, dp = _duration_setup(0.5)
    result = duration_aware_miss_rate(dp, dist)
    path = tmp_path / "d.csv"
    write_duration_csv(path, dist, dp, result)
    lines = path.read_text().splitlines()
    assert lines[0] == "rank,p,q,rate,prob_miss,method,t0,alpha"
    assert len(lines) == 101
    assert lines[1].split(",")[0] == "1" and lines[1].endswith(",cf_inversion,0.5,2")


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0.05, 6.0), st.floats(0.5, 4.0))
def test_cf_probabilities_are_probabilities(t0, rate, alpha):
    p = prob_short_contact_cf(t0, [rate], alpha)[0]
    assert math.exp(-rate) - 1e-4 <= p <= 1.0
