import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldpstream.attack_core import (MAXIMIZE, MINIMIZE, FakeAllocation, GapEstimate, Knowledge,
                                   allocation_to_batch, allocation_to_reports, idma_extreme,
                                   idma_objective, ipma_gap, ipma_objective, ipma_solve,
                                   ipma_sufficient_m, largest_remainder, msd_choose,
                                   odma_extreme, odma_lower_objective, opma_coefficients,
                                   opma_gap, opma_objective, opma_solve, opma_sufficient_m,
                                   project_box_simplex)
from ldpstream.errors import InvalidAllocationError
from ldpstream.freq_oracle import fo_aggregate, fo_params, fo_variance
from ldpstream.stream_protocols import APPROXIMATION, PUBLICATION

from oracles import box_grid, box_simplex_qp, compositions, l1_box

LN3 = math.log(3)
K = Knowledge(100, np.array([0.5, 0.5]))
TARGET = np.array([0.75, 0.25])


def test_ipma_sufficient_example():
    alloc = ipma_solve(K, TARGET, 100)
    np.testing.assert_array_equal(alloc.counts, [100, 0])
    assert ipma_objective(alloc.counts, K, TARGET, 100) == pytest.approx(0, abs=1e-15)


def test_ipma_insufficient_example():
    alloc = ipma_solve(K, TARGET, 20)
    np.testing.assert_array_equal(alloc.counts, [20, 0])
    expected = ((70 / 120 - 0.75) ** 2 + (50 / 120 - 0.25) ** 2) / 2
    assert ipma_objective(alloc.counts, K, TARGET, 20) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.0278, abs=1e-4)
    brute = min(ipma_objective(c, K, TARGET, 20) for c in compositions(20, 2))
    assert brute == pytest.approx(expected, rel=1e-12)


def test_ipma_identity_case():
    alloc = ipma_solve(K, K.f_e, 0)
    np.testing.assert_array_equal(alloc.counts, [0, 0])


def test_ipma_gap_at_sufficiency():
    alloc = ipma_solve(K, TARGET, 100)
    g = ipma_gap(alloc, 100, K.f_e, TARGET, "kRR", LN3, 100)
    assert g.bias == pytest.approx(0, abs=1e-15)
    assert g.value == pytest.approx(3 / (200 * 4), rel=1e-12)
    assert g.value == pytest.approx(fo_variance("kRR", 200, LN3, 2))
    g2 = ipma_gap(alloc, 100, K.f_e, TARGET, "kRR", 2.0, 100)
    g1 = ipma_gap(alloc, 100, K.f_e, TARGET, "kRR", 1.0, 100)
    assert g1.value > g2.value


def test_ipma_sufficient_m_examples():
    assert ipma_sufficient_m(100, [0.5, 0.5], [0.75, 0.25]) == 100
    assert ipma_sufficient_m(100, [0.3, 0.7], [0.3, 0.7]) == 0
    assert ipma_sufficient_m(100, [0.5, 0.5], [1.0, 0.0]) == math.inf


def test_opma_krr_example():
    params = fo_params("kRR", LN3, 2)
    alloc = opma_solve(K, TARGET, 100, params)
    np.testing.assert_allclose(alloc.counts, [75, 25])
    assert opma_objective(alloc.counts, opma_coefficients(K, TARGET, 100, params)) == \
        pytest.approx(0, abs=1e-9)


def test_opma_gap_at_sufficiency():
    params = fo_params("kRR", LN3, 2)
    alloc = opma_solve(K, TARGET, 100, params)
    g = opma_gap(alloc, 100, K.f_e, TARGET, params, 100)
    assert g.bias == pytest.approx(0, abs=1e-20)
    assert g.value == pytest.approx((100 / 200) ** 2 * fo_variance("kRR", 100, LN3, 2))
    assert g.value < fo_variance("kRR", 200, LN3, 2)
    small = opma_gap(opma_solve(Knowledge(50, K.f_e), TARGET, 50, params), 50, K.f_e, TARGET,
                     params, 50)
    assert small.value > g.value


@pytest.mark.parametrize("kind", ["kRR", "OUE"])
def test_opma_sufficient_m_reaches_zero_bias(kind):
    rng = np.random.default_rng(3)
    for _ in range(30):
        f = rng.dirichlet(np.ones(3))
        g = rng.dirichlet(np.ones(3))
        params = fo_params(kind, 1.0, 3)
        m = opma_sufficient_m(1000, f, g, params)
        alloc = opma_solve(Knowledge(1000, f), g, m, params, integral=False)
        assert opma_gap(alloc, 1000, f, g, params, m).bias < 1e-18
        assert opma_sufficient_m(1000, f, f, params) == 0


def test_opma_needs_fewer_fakes_than_ipma():
    rng = np.random.default_rng(4)
    for _ in range(50):
        f = rng.dirichlet(np.ones(4))
        g = rng.dirichlet(np.ones(4))
        assert opma_sufficient_m(1000, f, g, fo_params("kRR", 1.0, 4)) <= \
            ipma_sufficient_m(1000, f, g)


def test_opma_sufficient_m_against_feasibility_scan():
    params = fo_params("kRR", LN3, 2)
    f, g = np.array([0.5, 0.5]), np.array([0.75, 0.25])
    m_star = opma_sufficient_m(100, f, g, params)

    def reachable(m):
        alloc = opma_solve(Knowledge(100, f), g, m, params, integral=False)
        return opma_objective(alloc.counts, opma_coefficients(Knowledge(100, f), g, m, params)) < 1e-9

    assert reachable(m_star) and not reachable(m_star - 1)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=6), st.floats(0, 1), st.floats(0.1, 10))
def test_projection_is_feasible_and_optimal(c, frac, upper):
    c = np.array(c)
    total = frac * len(c) * upper
    x = project_box_simplex(c, total, upper)
    assert abs(x.sum() - total) < 1e-7 * max(1, total)
    assert np.all(x >= -1e-12) and np.all(x <= upper + 1e-12)
    if len(c) <= 4:
        ref = box_simplex_qp(c, total, upper)
        assert np.sum((x - c) ** 2) <= np.sum((ref - c) ** 2) + 1e-7


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0, 30), min_size=1, max_size=8))
def test_largest_remainder_preserves_total(x):
    x = np.array(x)
    total = int(round(x.sum()))
    out = largest_remainder(x, total)
    assert out.sum() == total
    assert np.all(np.abs(out - x) < 1 + 1e-9)


def test_largest_remainder_tie_goes_low():
    np.testing.assert_array_equal(largest_remainder([2.5, 2.5], 5), [3, 2])


@pytest.mark.parametrize("seed", range(20))
def test_ipma_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 5))
    m = int(rng.integers(0, 13))
    know = Knowledge(float(rng.integers(5, 60)), rng.dirichlet(np.ones(d)))
    target = rng.dirichlet(np.ones(d))
    alloc = ipma_solve(know, target, m)
    cont = ipma_solve(know, target, m, integral=False)
    c = (m + know.n_e) * target - know.n_e * know.f_e
    ref = box_simplex_qp(c, m, m)
    assert abs(ipma_objective(cont.counts, know, target, m)
               - ipma_objective(ref, know, target, m)) <= 1e-9
    brute = min(ipma_objective(v, know, target, m) for v in compositions(m, d))
    assert ipma_objective(alloc.counts, know, target, m) == pytest.approx(brute, abs=1e-12)


@pytest.mark.parametrize("kind", ["kRR", "OUE"])
@pytest.mark.parametrize("seed", range(15))
def test_opma_matches_brute_force(kind, seed):
    rng = np.random.default_rng(100 + seed)
    d = int(rng.integers(2, 5))
    m = int(rng.integers(1, 9))
    params = fo_params(kind, float(rng.uniform(0.2, 3)), d)
    know = Knowledge(float(rng.integers(5, 60)), rng.dirichlet(np.ones(d)))
    target = rng.dirichlet(np.ones(d))
    coeffs = opma_coefficients(know, target, m, params)
    cont = opma_solve(know, target, m, params, integral=False)
    _, ref = l1_box(coeffs, m, kind == "kRR")
    assert abs(opma_objective(cont.counts, coeffs) - ref) <= 1e-9
    grid = compositions(m, d) if kind == "kRR" else box_grid(m, d)
    brute = min(opma_objective(v, coeffs) for v in grid)
    alloc = opma_solve(know, target, m, params)
    assert opma_objective(alloc.counts, coeffs) <= brute + d


def test_idma_maximize_example():
    know = Knowledge(90, np.array([0.5, 0.3, 0.2]))
    f_last = np.array([0.2, 0.3, 0.5])
    alloc = idma_extreme(know, f_last, 10, MAXIMIZE)
    np.testing.assert_array_equal(alloc.counts, [10, 0, 0])
    brute = max(compositions(10, 3), key=lambda v: idma_objective(v, know, f_last, 10))
    assert tuple(alloc.counts) == brute


def test_idma_minimize_identity():
    know = Knowledge(90, np.array([0.5, 0.3, 0.2]))
    alloc = idma_extreme(know, know.f_e, 0, MINIMIZE)
    np.testing.assert_array_equal(alloc.counts, [0, 0, 0])


def test_idma_tie_breaks_low():
    know = Knowledge(90, np.array([0.5, 0.5]))
    alloc = idma_extreme(know, np.array([0.5, 0.5]), 10, MAXIMIZE)
    np.testing.assert_array_equal(alloc.counts, [10, 0])


@pytest.mark.parametrize("kind", ["kRR", "OUE"])
def test_odma_maximize_supports_least_frequent(kind):
    params = fo_params(kind, 1.0, 3)
    alloc = odma_extreme(Knowledge(90, np.ones(3) / 3), np.array([0.1, 0.3, 0.6]), 10, MAXIMIZE,
                         params)
    np.testing.assert_array_equal(alloc.counts, [10, 0, 0])
    reports = allocation_to_reports(alloc, params, np.random.default_rng(0))
    if kind == "kRR":
        assert np.all(reports == 0)
    else:
        assert np.all(reports[:, 0] == 1) and reports[:, 1:].sum() == 0


@pytest.mark.parametrize("seed", range(10))
def test_odma_maximize_beats_single_item_alternatives(seed):
    rng = np.random.default_rng(seed)
    params = fo_params("kRR", 1.0, 3)
    know = Knowledge(50, rng.dirichlet(np.ones(3)))
    f_last = rng.dirichlet(np.ones(3))
    m = int(rng.integers(1, 6))
    alloc = odma_extreme(know, f_last, m, MAXIMIZE, params)
    best = odma_lower_objective(alloc.counts, know, f_last, m, params)
    for k in range(3):
        one = np.zeros(3)
        one[k] = m
        assert best >= odma_lower_objective(one, know, f_last, m, params) - 1e-15


def test_odma_minimize_matches_no_attack_expectation():
    params = fo_params("kRR", 1.0, 3)
    f = np.array([0.2, 0.3, 0.5])
    alloc = odma_extreme(Knowledge(1000, f), f, 30, MINIMIZE, params)
    np.testing.assert_allclose(alloc.fractional, params.gap * 30 * f + 30 * params.q, atol=1e-9)


def test_msd_examples():
    assert msd_choose(0.02, 0.01) == PUBLICATION
    assert msd_choose(0.005, 0.01) == APPROXIMATION
    assert msd_choose(5.0, math.inf) == APPROXIMATION


def test_allocation_validation():
    with pytest.raises(InvalidAllocationError):
        FakeAllocation(np.array([3, 3]), 5, "input")
    with pytest.raises(InvalidAllocationError):
        FakeAllocation(np.array([-1, 6]), 5, "output-kRR")
    FakeAllocation(np.array([5, 5]), 5, "output-OUE")


def test_reports_from_allocations(rng):
    params = fo_params("kRR", 50.0, 2)
    fake = allocation_to_reports(FakeAllocation(np.array([100, 0]), 100, "input"), params, rng)
    np.testing.assert_allclose(fo_aggregate(params, fake), [1, 0], atol=1e-12)
    krr = allocation_to_reports(FakeAllocation(np.array([75, 25]), 100, "output-kRR"),
                                fo_params("kRR", LN3, 2), rng)
    assert np.sum(krr == 0) == 75 and np.sum(krr == 1) == 25
    oue = fo_params("OUE", 1.0, 2)
    rows = allocation_to_reports(FakeAllocation(np.array([2.5, 2.5]), 5, "output-OUE"), oue, rng)
    assert rows.shape == (5, 2)
    np.testing.assert_array_equal(rows.sum(axis=0), [3, 2])


def test_batch_matches_materialized_totals(rng):
    params = fo_params("OUE", 1.0, 3)
    alloc = FakeAllocation(np.array([4, 1, 0]), 4, "output-OUE")
    a = allocation_to_batch(alloc, params, rng)
    b = allocation_to_batch(alloc, params, rng, materialize=True)
    np.testing.assert_array_equal(a.totals, b.totals)
    assert a.size == b.size == 4


def test_gap_estimate_sums():
    g = GapEstimate.of(0.1, 0.2)
    assert g.value == pytest.approx(0.3)
