import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldpstream.defense import (DefenseConfig, accuracy_gain, defended_release, iforest_scores,
                               ks_consistency, ks_critical, ks_statistic, subsample_estimates)
from ldpstream.errors import InvalidConfigError
from ldpstream.freq_oracle import (effective_sample_size, estimate_from_counts, fo_aggregate,
                                   fo_params, fo_perturb, fo_variance, sample_support_counts)


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        DefenseConfig(r=0)
    with pytest.raises(InvalidConfigError):
        DefenseConfig(s=1)


@pytest.mark.parametrize("kind", ["kRR", "OUE"])
def test_full_subsets_equal_full_aggregate(kind, rng):
    params = fo_params(kind, 1.0, 3)
    reports = fo_perturb(params, rng.integers(0, 3, 500), rng)
    ests = subsample_estimates(reports, params, 1.0, 2, rng)
    np.testing.assert_allclose(ests[0], fo_aggregate(params, reports))
    np.testing.assert_allclose(ests[1], ests[0])


def test_subset_spread_matches_variance():
    rng = np.random.default_rng(0)
    params = fo_params("OUE", 1.0, 4)
    N, r = 20_000, 0.5
    reports = fo_perturb(params, rng.integers(0, 4, N), rng)
    ests = np.array(subsample_estimates(reports, params, r, 400, rng))
    # subsets of a fixed pool share reports, so the spread is Var(rN) scaled by (1 - r)
    expected = fo_variance("OUE", r * N, 1.0, 4) * (1 - r)
    assert ests.var(axis=0).mean() == pytest.approx(expected, rel=0.2)


def test_krr_hypergeometric_subsets_match_rowwise(rng):
    params = fo_params("kRR", 1.0, 3)
    reports = fo_perturb(params, rng.integers(0, 3, 3000), rng)
    fast = np.array(subsample_estimates(reports, params, 0.3, 2000, rng))
    slow = []
    for _ in range(2000):
        idx = rng.choice(3000, 900, replace=False)
        slow.append(fo_aggregate(params, reports[idx]))
    np.testing.assert_allclose(fast.mean(axis=0), np.mean(slow, axis=0), atol=0.01)
    np.testing.assert_allclose(fast.var(axis=0), np.var(slow, axis=0), rtol=0.15)


def test_attacked_subset_deviates():
    rng = np.random.default_rng(1)
    params = fo_params("kRR", 1.0, 4)
    genuine = fo_perturb(params, rng.integers(0, 4, 7000), rng)
    fake = np.zeros(3000, dtype=np.int64)
    reports = np.concatenate([genuine, fake])
    ests = np.array(subsample_estimates(reports, params, 0.05, 20, rng))
    clean = fo_aggregate(params, genuine)
    sigma = math.sqrt(fo_variance("kRR", 500, 1.0, 4))
    assert np.all(np.abs(ests[:, 0] - clean[0]) > 3 * sigma)


def test_iforest_flags_outlier():
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(0, 0.1, (50, 2)), [[5.0, 5.0]]])
    scores = iforest_scores(X, DefenseConfig(), rng)
    assert int(np.argmin(scores)) == 50
    release, score = defended_release(list(X), scores)
    assert score == scores.max()
    assert np.linalg.norm(release) < 1


def test_iforest_identical_vectors_equal_scores(rng):
    scores = iforest_scores(np.ones((20, 3)), DefenseConfig(), rng)
    assert np.all(scores == scores[0])


def test_iforest_permutation_invariance_in_distribution():
    base = np.random.default_rng(3).normal(size=(20, 3))
    perm = base[:, [2, 0, 1]]
    a = np.mean([iforest_scores(base, DefenseConfig(), np.random.default_rng(s))
                 for s in range(60)], axis=0)
    b = np.mean([iforest_scores(perm, DefenseConfig(), np.random.default_rng(1000 + s))
                 for s in range(60)], axis=0)
    np.testing.assert_allclose(a, b, atol=0.02)


def test_release_tie_goes_low():
    release, _ = defended_release([np.zeros(2), np.ones(2)], [0.5, 0.5])
    np.testing.assert_array_equal(release, np.zeros(2))


def test_ks_identical_estimates():
    assert ks_statistic([0.2, 0.8], [0.2, 0.8]) == 0
    assert not ks_consistency([0.2, 0.8], [0.2, 0.8], 100, 100, 0.05)


def test_ks_critical_value():
    assert ks_critical(0.05, 100, 100) == pytest.approx(1.3581 * math.sqrt(2 / 100), rel=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 2), min_size=2, max_size=8))
def test_ks_statistic_bounds(vec):
    vec = np.array(vec)
    other = vec[::-1]
    assert 0 <= ks_statistic(vec, other) <= 1
    assert ks_statistic(vec, other) == pytest.approx(ks_statistic(other, vec))


def test_ks_detects_odma_push():
    """Maximizing fake reports in the dissimilarity phase against a clean publication estimate."""
    hits = 0
    n, m = 70_000, 30_000
    hist = np.array([30_000, 40_000])
    p1 = fo_params("kRR", 0.025, 2)
    p2 = fo_params("kRR", 0.25, 2)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        a = sample_support_counts(p1, hist, rng)
        a[0] += m
        b = sample_support_counts(p2, hist, rng)
        est_a = estimate_from_counts(p1, a, n + m)
        est_b = estimate_from_counts(p2, b, n)
        hits += ks_consistency(est_a, est_b, effective_sample_size(p1, n + m),
                               effective_sample_size(p2, n), 0.05)
    assert hits >= 80


def test_accuracy_gain_examples():
    truth = np.zeros((4, 2))
    before = np.full((4, 2), math.sqrt(0.02))
    after = np.full((4, 2), math.sqrt(0.015))
    assert accuracy_gain(before, after, truth) == pytest.approx(0.005)
    assert accuracy_gain(before, before, truth) == 0
    assert accuracy_gain(before, truth, truth) == pytest.approx(0.02)
