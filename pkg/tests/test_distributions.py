import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errepo.distributions import (
    AnalysisConfig,
    DistTest,
    FeatureDistribution,
    ProblemProfile,
    distance_to_similarity,
    empirical_cdf,
    ks_statistic,
    problem_similarity,
    psi,
    unit_grid,
    wasserstein_distance,
)
from errepo.errors import ArityMismatch, EmptyDistribution, InvalidGrid, NegativeDistance

from oracles import naive_ks, naive_psi, naive_sim_p, naive_wd, pstdev

samples = st.lists(st.floats(0, 1), min_size=1, max_size=25)
quantized = st.lists(st.integers(0, 10).map(lambda i: i / 10), min_size=1, max_size=25)


def test_ks_examples():
    assert ks_statistic([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]) == 0.0
    assert ks_statistic([0.1, 0.2, 0.3, 0.4], [0.3, 0.4, 0.5, 0.6]) == 0.5
    assert ks_statistic([0.0], [1.0]) == 1.0


def test_ks_empty():
    with pytest.raises(EmptyDistribution):
        ks_statistic([], [0.5])


def test_wd_identical_is_zero():
    for m in (2, 3, 101):
        assert wasserstein_distance([0.2, 0.7], [0.7, 0.2], m) == (0.0, 0.0)


def test_wd_three_point_grid():
    # CDFs on grid [0, .5, 1]: a -> [0, .5, 1], b -> [0, 1, 1]
    raw, norm = wasserstein_distance([0.25, 0.75], [0.25, 0.5], 3)
    assert raw == pytest.approx(0.5)
    assert norm == pytest.approx(0.5 / 3)
    assert round(norm, 4) == 0.1667


def test_wd_zeros_vs_ones():
    raw, norm = wasserstein_distance(np.zeros(10), np.ones(10), 101)
    assert raw == 100.0
    assert norm == pytest.approx(100 / 101)


def test_wd_grid_checks():
    with pytest.raises(InvalidGrid):
        wasserstein_distance([0.1], [0.2], 1)
    with pytest.raises(InvalidGrid):
        empirical_cdf(FeatureDistribution([0.1]), 1)


def test_unit_grid_is_exact():
    g = unit_grid(101)
    assert all(g[i] == i / 100 for i in range(101))


def test_empirical_cdf_shape():
    e = empirical_cdf(FeatureDistribution([0.3, 0.1, 0.9]), 11)
    assert e.cdf_values[-1] == 1.0
    assert np.all(np.diff(e.cdf_values) >= 0)


def test_psi_identical_is_zero():
    a = [0.1, 0.35, 0.35, 0.8]
    assert psi(a, list(reversed(a))) == 0.0


def test_psi_two_bins():
    # shares [0.5, 0.5] vs [0.25, 0.75], no smoothing
    value = psi([0.1, 0.9], [0.1, 0.6, 0.7, 0.8], bins=2, eps=0.0)
    assert value == pytest.approx(0.25 * math.log(2) - 0.25 * math.log(2 / 3))
    assert round(value, 5) == 0.27465


def test_psi_disjoint_bins():
    eps = 1e-6
    value = psi([0.1, 0.2], [0.9, 1.0], bins=2, eps=eps)
    p_hi = (1 + eps) / (1 + 2 * eps)
    p_lo = eps / (1 + 2 * eps)
    assert value == pytest.approx(2 * (p_hi - p_lo) * math.log(p_hi / p_lo))
    assert value == pytest.approx(27.6, abs=0.05)


def test_psi_right_edge_lands_in_last_bin():
    assert psi([1.0], [0.99], bins=100, eps=1e-6) == 0.0


def test_psi_bins_check():
    with pytest.raises(InvalidGrid):
        psi([0.1], [0.2], bins=1)


@pytest.mark.parametrize("test,d,expected", [
    ("KS", 0.0, 1.0), ("WD", 0.1667, 0.8333), ("PSI", 0.27465, 0.7598),
])
def test_distance_to_similarity(test, d, expected):
    assert distance_to_similarity(test, d) == pytest.approx(expected, abs=1e-4)


def test_negative_distance():
    with pytest.raises(NegativeDistance):
        distance_to_similarity(DistTest.KS, -0.1)


def test_dist_test_parsing():
    assert DistTest("KS") is DistTest.KS and DistTest("psi") is DistTest.PSI
    with pytest.raises(ValueError):
        DistTest("chi2")


def test_analysis_config_checks():
    with pytest.raises(InvalidGrid):
        AnalysisConfig(wd_grid=1)
    with pytest.raises(InvalidGrid):
        AnalysisConfig(psi_bins=1)


def test_sim_p_self_is_one():
    rng = np.random.default_rng(5)
    x = rng.random((50, 4))
    for t in DistTest:
        s = problem_similarity(x, x, t)
        if t is DistTest.PSI:
            assert s.sim_p >= 1 - 1e-9
        else:
            assert s.sim_p == 1.0


def test_sim_p_weights_example(monkeypatch):
    # column stds are 0.3 and 0.1 in both problems; distances stubbed to give sims [0.8, 0.6]
    import errepo.distributions as d

    p = np.array([[0.2, 0.4], [0.8, 0.6]])
    fake = iter([0.2, 0.4])
    monkeypatch.setattr(d, "feature_distance", lambda *a, **k: next(fake))
    s = problem_similarity(p, p.copy(), "KS")
    assert s.weights == pytest.approx((0.75, 0.25))
    assert s.per_feature_similarity == pytest.approx((0.8, 0.6))
    assert s.sim_p == pytest.approx(0.75)


def test_sim_p_arity_mismatch():
    with pytest.raises(ArityMismatch):
        problem_similarity(np.zeros((3, 2)), np.zeros((3, 3)))


def test_zero_variance_falls_back_to_uniform_weights():
    s = problem_similarity(np.zeros((3, 2)), np.ones((4, 2)), "KS")
    assert s.weights == (0.5, 0.5)
    assert s.sim_p == 0.0


def test_profile_caches_on_problem():
    from errepo.core import ERProblem
    from errepo.distributions import profile_of

    p = ERProblem(("a", "b"), ["x"], ["y"], [[0.1, 0.2]], ["f", "g"])
    assert profile_of(p) is profile_of(p)
    assert isinstance(profile_of(p), ProblemProfile)


@settings(max_examples=150, deadline=None)
@given(a=samples, b=samples)
def test_ks_matches_oracle(a, b):
    assert ks_statistic(a, b) == pytest.approx(naive_ks(a, b), abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(a=st.one_of(samples, quantized), b=st.one_of(samples, quantized), m=st.integers(2, 60))
def test_wd_matches_oracle(a, b, m):
    raw, norm = wasserstein_distance(a, b, m)
    n_raw, n_norm = naive_wd(a, b, m)
    assert raw == pytest.approx(n_raw, abs=1e-12)
    assert 0.0 <= norm <= 1.0


@settings(max_examples=100, deadline=None)
@given(a=st.one_of(samples, quantized), b=st.one_of(samples, quantized), bins=st.integers(2, 30))
def test_psi_matches_oracle(a, b, bins):
    assert psi(a, b, bins) == pytest.approx(naive_psi(a, b, bins), rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(a=samples, b=samples)
def test_tests_are_symmetric_and_bounded(a, b):
    assert ks_statistic(a, b) == ks_statistic(b, a)
    assert 0.0 <= ks_statistic(a, b) <= 1.0
    assert wasserstein_distance(a, b) == wasserstein_distance(b, a)
    assert psi(a, b) == psi(b, a) >= 0.0


cols = st.integers(1, 4).flatmap(
    lambda t: st.tuples(
        st.lists(st.lists(st.floats(0, 1), min_size=t, max_size=t), min_size=1, max_size=20),
        st.lists(st.lists(st.floats(0, 1), min_size=t, max_size=t), min_size=1, max_size=20),
    )
)


@settings(max_examples=100, deadline=None)
@given(data=cols)
def test_sim_p_matches_oracle(data):
    p, q = np.array(data[0]), np.array(data[1])
    s = problem_similarity(p, q, "KS")
    expected = naive_sim_p([list(c) for c in p.T], [list(c) for c in q.T])
    assert s.sim_p == pytest.approx(expected, abs=1e-12)
    assert math.fsum(s.weights) == pytest.approx(1.0)
    assert s.sim_p == pytest.approx(math.fsum(w * x for w, x in zip(s.weights, s.per_feature_similarity)))
    for f in range(p.shape[1]):
        assert FeatureDistribution(p[:, f]).std == pytest.approx(pstdev(list(p[:, f])), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(data=cols, test=st.sampled_from(list(DistTest)))
def test_sim_p_in_unit_interval(data, test):
    s = problem_similarity(np.array(data[0]), np.array(data[1]), test)
    assert 0.0 <= s.sim_p <= 1.0
    assert all(0.0 <= x <= 1.0 for x in s.per_feature_similarity)
