import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from twotier.model import (
    BchConfig,
    BlockFailureRates,
    BlockGeometry,
    ErasureCode,
    ErrorRates,
    Replication,
    binomial_pmf,
    bch_codeword_length,
    block_failure,
    cache_line_due,
    ec_due,
    ec_extra_reads,
    ec_nde,
    evaluate,
    log1mexp,
    log_binomial_tail,
    log_block_failure,
    log_cache_line_due,
    log_ec_due,
    log_ec_nde,
    log_replication_nde,
    logsumexp,
    physical_block_rates,
    replication_due,
    replication_extra_reads,
    replication_nde,
)

F = Fraction


def rel(a, b):
    return abs(a - b) / abs(b)


# --- geometry and BCH ------------------------------------------------------


@pytest.mark.parametrize("k,t,n", [(2048, 0, 2048), (2048, 3, 2084), (8, 2, 16), (2, 1, 4),
                                   (1000, 1, 1011), (1024, 1, 1035), (1025, 1, 1037)])
def test_bch_codeword_length(k, t, n):
    assert bch_codeword_length(k, t) == n
    assert bch_codeword_length(k, t) == oracles.bch_length(k, t)
    assert BchConfig(k, t).n == n


@pytest.mark.parametrize("k,t", [(1, 0), (0, 3), (2048, -1)])
def test_bch_rejects_bad_parameters(k, t):
    with pytest.raises(ValueError):
        bch_codeword_length(k, t)
    with pytest.raises(ValueError):
        BchConfig(k, t)


def test_geometry_validation():
    assert BlockGeometry().lines_per_block == 64
    assert BlockGeometry().split(4) == BlockGeometry(64, 1024)
    with pytest.raises(ValueError):
        BlockGeometry(64, 100)
    with pytest.raises(ValueError):
        BlockGeometry(0, 64)
    with pytest.raises(ValueError):
        BlockGeometry(64, 4096).split(3)


def test_scheme_validation():
    assert ErasureCode(4, 6).r == 2
    assert Replication(3).label == "rep3" and ErasureCode(4, 6).label == "ec4-6"
    for bad in (lambda: Replication(0), lambda: ErasureCode(0, 3), lambda: ErasureCode(5, 4)):
        with pytest.raises(ValueError):
            bad()


# --- log-domain helpers ----------------------------------------------------


def test_log1mexp_matches_direct_form():
    for x in (-1e-20, -1e-5, -0.5, -0.7, -1.0, -30.0, -800.0):
        expected = math.log(-math.expm1(x)) if x > -700 else math.log1p(-math.exp(x))
        assert log1mexp(x) == pytest.approx(expected, rel=1e-14)
    assert log1mexp(float("-inf")) == 0.0
    assert log1mexp(0.0) == float("-inf")


def test_logsumexp():
    assert logsumexp([math.log(2), math.log(3)]) == pytest.approx(math.log(5))
    assert logsumexp([float("-inf")] * 3) == float("-inf")
    assert logsumexp([-2000.0, -2000.0]) == pytest.approx(-2000.0 + math.log(2))


@pytest.mark.parametrize("n,j,p", [(2168, 11, "2e-4"), (2168, 25, "2e-4"), (100, 3, "0.3"),
                                   (100, 80, "0.3"), (16, 1, "0.1"), (50, 50, "0.5")])
def test_log_binomial_tail_against_rational_oracle(n, j, p):
    exact = oracles.binomial_upper_tail(n, j, F(p))
    assert log_binomial_tail(n, j, float(p)) == pytest.approx(oracles.log_of(exact), rel=1e-11)


def test_binomial_tail_edges():
    assert log_binomial_tail(10, 0, 0.3) == 0.0
    assert log_binomial_tail(10, 11, 0.3) == float("-inf")
    assert log_binomial_tail(10, 1, 0.0) == float("-inf")


# --- cache line and physical block ------------------------------------------


def test_cache_line_due_examples():
    assert cache_line_due(BchConfig(2048, 10), 0.0) == 0.0
    exact = cache_line_due(BchConfig(8, 0), F(1, 10))
    assert exact == F(18, 1000) * (1 - F(9, 10) ** 8)
    assert float(exact) == pytest.approx(1.0252e-2, rel=1e-4)
    assert cache_line_due(BchConfig(8, 0), 0.1) == pytest.approx(float(exact), rel=1e-13)


def test_cache_line_due_golden_k2048_t10():
    want = oracles.line_due(2048, 10, F(1, 5000))
    assert log_cache_line_due(BchConfig(2048, 10), 2e-4) == pytest.approx(oracles.log_of(want),
                                                                          rel=1e-12)
    assert cache_line_due(BchConfig(2048, 10), F(1, 5000)) == want


def test_cache_line_due_presents_tiny_values():
    v = cache_line_due(BchConfig(2048, 40), 2e-4)
    assert 0 < v < 1e-60
    exact = oracles.line_due(2048, 40, F(1, 5000))
    assert math.log(v) == pytest.approx(oracles.log_of(exact), rel=1e-10)


def test_physical_block_examples():
    assert block_failure(0.0, 64) == 0.0
    assert block_failure(0.37, 1) == pytest.approx(0.37)
    assert block_failure(1e-3, 64) == pytest.approx(1 - 0.999**64, rel=1e-12)
    # 1 - 0.999**64 = 6.2025e-2 exactly to five digits
    assert float(block_failure(F(1, 1000), 64)) == pytest.approx(6.2025036e-2, rel=1e-7)
    cell = ErrorRates(2e-4, 1e-3, 1e-5)
    rates = physical_block_rates(cell, BlockGeometry(64, 64))
    assert rates.p_pb_due == pytest.approx(1e-3) and rates.p_pb_nde == pytest.approx(1e-5)


@pytest.mark.parametrize("p", [1e-12, 1e-20, 1e-300])
@pytest.mark.parametrize("m", [64, 2**16])
def test_block_failure_stable_for_tiny_p(p, m):
    # truncation error of the series is below C(m, 5) p^5, far under 1e-9 relative
    exact = oracles.block_fail_series(F(p), m)
    assert rel(block_failure(p, m), float(exact)) <= 1e-9
    assert rel(math.exp(log_block_failure(math.log(p), m)), float(exact)) <= 1e-9


def test_error_rates_provenance():
    derived = ErrorRates.from_rber(BchConfig(2048, 10), 2e-4)
    assert derived.derived
    assert not ErrorRates(2e-4, 1e-3).derived
    with pytest.raises(ValueError):
        ErrorRates(2e-4, 1.5)


# --- replication -------------------------------------------------------------


def test_replication_due_examples():
    assert replication_due(0.37, 1) == pytest.approx(0.37)
    assert replication_due(0.1, 3) == pytest.approx(1e-3, rel=1e-13)
    assert replication_due(1e-11, 3) == pytest.approx(1e-33, rel=1e-12)
    assert replication_due(F(1, 10), 3) == F(1, 1000)


def test_replication_nde_examples():
    assert replication_nde(0.0, 0.02, 4) == pytest.approx(0.08)
    assert replication_nde(0.3, 0.0, 4) == 0.0
    assert replication_nde(0.5, 0.01, 2) == pytest.approx(0.015)
    assert replication_nde(F(1, 2), F(1, 100), 2) == F(15, 1000)
    log_v = log_replication_nde(math.log(0.5), math.log(0.01), 2)
    assert math.exp(log_v) == pytest.approx(0.015)


def test_replication_extra_reads_examples():
    assert replication_extra_reads(0.0, 3) == 0.0
    assert replication_extra_reads(1e-3, 3) == pytest.approx(1.001e-3 - 3e-9, rel=1e-12)
    assert replication_extra_reads(F(1, 1000), 3) == oracles.closed_rep_extra(F(1, 1000), 3)
    assert replication_extra_reads(0.5, 2) == 0.0
    assert replication_extra_reads(F(1, 2), 2) == 0
    with pytest.raises(ValueError):
        replication_extra_reads(1.0, 3)


@settings(max_examples=200, deadline=None)
@given(p=st.floats(1e-12, 1e-3), n=st.integers(2, 8))
def test_replication_extra_reads_small_p(p, n):
    a_r = replication_extra_reads(p, n)
    assert abs(a_r - p) <= 10 * p * p


def test_replication_extra_reads_single_replica_is_minus_p():
    # the closed-form sum has only its i = 0 term: -1 + (1 - p)
    assert replication_extra_reads(0.25, 1) == pytest.approx(-0.25)


# --- erasure coding ----------------------------------------------------------


def test_binomial_pmf_examples():
    assert binomial_pmf(0, 5, 0.0) == 1.0
    assert binomial_pmf(5, 5, 1.0) == 1.0
    assert binomial_pmf(3, 6, F(1, 10)) == F(1458, 100000)
    assert binomial_pmf(3, 6, 0.1) == pytest.approx(1.458e-2, rel=1e-13)
    with pytest.raises(ValueError):
        binomial_pmf(7, 6, 0.1)


@pytest.mark.parametrize("p", [F(1, 10), F(3, 7), F(1, 1000)])
@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_ec_due_special_cases(p, n):
    assert ec_due(p, n, n) == 1 - (1 - p) ** n
    assert ec_due(p, 1, n) == replication_due(p, n)
    assert ec_due(float(p), 1, n) == pytest.approx(replication_due(float(p), n), rel=1e-12)


def test_ec_due_k4_n6():
    assert ec_due(F(1, 10), 4, 6) == F(317, 20000)
    assert ec_due(0.1, 4, 6) == pytest.approx(1.585e-2, rel=1e-13)
    assert ec_due(F(1, 10), 4, 6) == oracles.closed_ec_due(F(1, 10), 4, 6)


def test_ec_nde_examples():
    assert ec_nde(0.1, 0.0, 4, 6) == 0.0
    assert ec_nde(0.1, 0.3, 1, 6) == 0.0
    assert ec_nde(F(1, 10), F(3, 10), 1, 6) == 0
    want = oracles.closed_ec_nde(F(1, 100), F(1, 10000), 4, 6)
    assert ec_nde(F(1, 100), F(1, 10000), 4, 6) == want
    assert ec_nde(0.01, 1e-4, 4, 6) == pytest.approx(float(want), rel=1e-12)
    assert math.exp(log_ec_nde(math.log(0.01), math.log(1e-4), 4, 6)) == pytest.approx(float(want),
                                                                                    rel=1e-12)


def test_ec_extra_reads_examples():
    # p = 0 leaves the i = 0 term: -K + C(N, K) * K
    assert ec_extra_reads(0.0, 4, 6) == pytest.approx(-4 + 15 * 4)
    assert ec_extra_reads(F(0), 4, 6) == 56
    assert ec_extra_reads(0.0, 1, 1) == 0.0
    want = oracles.closed_ec_extra(F(1, 1000), 4, 6)
    assert ec_extra_reads(F(1, 1000), 4, 6) == want
    assert ec_extra_reads(1e-3, 4, 6) == pytest.approx(float(want), rel=1e-12)


def test_log_ec_due_deep_tail():
    p = 1e-15
    exact = oracles.closed_ec_due(F(p), 4, 6)
    assert log_ec_due(math.log(p), 4, 6) == pytest.approx(oracles.log_of(exact), rel=1e-12)


# --- dispatch and properties --------------------------------------------------


def test_evaluate_examples():
    r = evaluate(Replication(1), BlockFailureRates(0.2, 0.01))
    assert r.p_lb_due == pytest.approx(0.2) and r.p_lb_nde == pytest.approx(0.01)
    assert r.a_r == pytest.approx(-0.2)
    assert evaluate(Replication(3), BlockFailureRates(0.1)).p_lb_due == pytest.approx(1e-3)
    assert evaluate(ErasureCode(4, 6), BlockFailureRates(0.1)).p_lb_due == pytest.approx(1.585e-2)
    exact = evaluate(ErasureCode(4, 6), BlockFailureRates(F(1, 10), F(0)))
    assert exact.p_lb_due == F(317, 20000)
    with pytest.raises(TypeError):
        evaluate("rep3", BlockFailureRates(0.1))


probs = st.fractions(min_value=0, max_value=1, max_denominator=50)


@settings(max_examples=100, deadline=None)
@given(p=probs, n=st.integers(1, 7))
def test_due_monotone_in_n(p, n):
    assert replication_due(p, n + 1) <= replication_due(p, n)
    for k in range(1, n + 1):
        assert ec_due(p, k, n + 1) <= ec_due(p, k, n)


@settings(max_examples=100, deadline=None)
@given(p=probs, k=st.integers(1, 6), extra=st.integers(0, 4))
def test_due_outputs_are_probabilities(p, k, extra):
    n = k + extra
    for v in (replication_due(p, n), ec_due(p, k, n), binomial_pmf(0, n, p)):
        assert 0 <= v <= 1
    assert 0 <= ec_due(float(p), k, n) <= 1


@settings(max_examples=50, deadline=None)
@given(t=st.integers(0, 30), r=st.floats(1e-6, 1e-2))
def test_cache_line_due_monotone(t, r):
    bch = BchConfig(2048, t)
    assert log_cache_line_due(BchConfig(2048, t + 1), r) <= log_cache_line_due(bch, r)
    assert log_cache_line_due(bch, r) <= log_cache_line_due(bch, r * 1.5)


def test_probability_inputs_checked():
    for bad in (lambda: replication_due(1.5, 2), lambda: ec_due(-0.1, 2, 3),
                lambda: replication_nde(0.1, 2.0, 2), lambda: BlockFailureRates(1.2)):
        with pytest.raises(ValueError):
            bad()
