import json
import os
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from twotier import _rng
from twotier.model import BlockFailureRates, ErasureCode, Replication
from twotier.montecarlo import (
    Estimate,
    TrialConfig,
    divergence_report,
    enumerate_exact,
    simulate,
    simulate_ec,
    simulate_replication,
)

F = Fraction
FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="module")
def golden():
    with open(os.path.join(FIXTURES, "golden.json")) as fh:
        return json.load(fh)


def _frac(s):
    return None if s is None else F(s)


# --- rng -----------------------------------------------------------------------


def test_rng_backends_bit_identical():
    seeds = [0, 1, 42, 2**64 - 1]
    a = np.arange(50, dtype=np.uint64)
    for seed in seeds:
        vec = _rng.uniform_np(seed, a, 7, 3)
        for i in range(50):
            py = _rng.uniform_py(seed, i, 7, 3)
            assert py == vec[i] == _rng.uniform_nb(np.uint64(seed), i, 7, 3)


def test_rng_range_and_spread():
    u = _rng.uniform_np(123, np.arange(200_000, dtype=np.uint64), 0, 0)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005
    assert len(np.unique(u)) == u.size


# --- exhaustive enumeration vs independent three-state oracle -----------------


def test_enumeration_matches_oracle_fixtures(golden):
    for case in golden["protocol_rep"]:
        truth = enumerate_exact(Replication(case["n"]),
                                BlockFailureRates(F(case["p_due"]), F(case["p_nde"])))
        want = case["truth"]
        assert truth.p_lb_due == F(want["p_fail"])
        assert truth.p_lb_nde == F(want["p_nde"])
        assert truth.extra_reads_unconditional == F(want["extra_unconditional"])
        assert truth.extra_reads_given_success == _frac(want["extra_given_success"])
    for case in golden["protocol_ec"]:
        truth = enumerate_exact(ErasureCode(case["k"], case["n"]),
                                BlockFailureRates(F(case["p_due"]), F(case["p_nde"])))
        want = case["truth"]
        assert truth.p_lb_due == F(want["p_fail"])
        assert truth.p_lb_nde == F(want["p_nde"])
        assert truth.extra_reads_given_success == _frac(want["extra_given_success"])


def test_two_way_half_example():
    truth = enumerate_exact(Replication(2), BlockFailureRates(F(1, 2)))
    assert truth.extra_reads_given_success == F(1, 3)
    assert truth.extra_reads_unconditional == F(1, 2)
    assert truth.p_lb_due == F(1, 4)


def test_enumeration_degenerate_cases():
    all_fail = enumerate_exact(ErasureCode(4, 6), BlockFailureRates(F(1)))
    assert all_fail.p_lb_due == 1 and all_fail.extra_reads_given_success is None
    with pytest.raises(ValueError):
        enumerate_exact(Replication(21), BlockFailureRates(F(1, 10)))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 5), k=st.integers(1, 5),
       p=st.fractions(0, 1, max_denominator=12), q=st.fractions(0, 1, max_denominator=12))
def test_enumeration_property_against_oracle(n, k, p, q):
    k = min(k, n)
    if p + q > 1:
        q = 1 - p
    scheme = Replication(n) if k == 1 else ErasureCode(k, n)
    ours = enumerate_exact(scheme, BlockFailureRates(p, q))
    ref = oracles.protocol(k, n, p, q)
    assert ours.p_lb_due == ref["p_fail"]
    assert ours.p_lb_nde == ref["p_nde"]
    assert ours.extra_reads_unconditional == ref["extra_unconditional"]


# --- sampling ----------------------------------------------------------------


@pytest.mark.parametrize("scheme", [Replication(3), ErasureCode(4, 6), Replication(1)])
def test_backends_agree_exactly(scheme):
    cfg = TrialConfig(scheme, BlockFailureRates(0.2, 0.05), trials=300_001, seed=9)
    a = simulate(cfg, backend="numba")
    b = simulate(cfg, backend="numpy")
    assert a == b


def test_same_seed_same_result_and_seeds_differ():
    cfg = TrialConfig(Replication(3), BlockFailureRates(0.3), trials=100_000, seed=5)
    assert simulate(cfg) == simulate(cfg)
    other = simulate(TrialConfig(Replication(3), BlockFailureRates(0.3), trials=100_000, seed=6))
    assert other.failures != simulate(cfg).failures


def test_zero_and_one_probabilities():
    zero = simulate(TrialConfig(ErasureCode(4, 6), BlockFailureRates(0.0), trials=10_000))
    assert zero.est_p_lb_due.value == 0 and zero.est_extra_reads_unconditional.value == 0
    assert zero.est_extra_reads_given_success.value == 0
    one = simulate(TrialConfig(Replication(3), BlockFailureRates(1.0), trials=1000))
    assert one.est_p_lb_due.value == 1.0
    assert np.isnan(one.est_extra_reads_given_success.value)


@pytest.mark.parametrize("scheme", [Replication(3), ErasureCode(4, 6), ErasureCode(2, 5)])
@pytest.mark.parametrize("p_due,p_nde", [(0.1, 0.01), (0.3, 0.0), (0.05, 0.2)])
def test_estimates_within_3_sigma_of_truth(scheme, p_due, p_nde):
    rates = BlockFailureRates(p_due, p_nde)
    est = simulate(TrialConfig(scheme, rates, trials=1_000_000, seed=17))
    truth = enumerate_exact(scheme, BlockFailureRates(F(repr(p_due)), F(repr(p_nde))))
    assert est.est_p_lb_due.within(float(truth.p_lb_due))
    assert est.est_p_lb_nde.within(float(truth.p_lb_nde))
    assert est.est_extra_reads_unconditional.within(float(truth.extra_reads_unconditional))
    assert est.est_extra_reads_given_success.within(float(truth.extra_reads_given_success))


def test_typed_wrappers():
    rates = BlockFailureRates(0.1)
    simulate_replication(TrialConfig(Replication(2), rates, 10))
    simulate_ec(TrialConfig(ErasureCode(2, 3), rates, 10))
    with pytest.raises(TypeError):
        simulate_ec(TrialConfig(Replication(2), rates, 10))
    with pytest.raises(TypeError):
        simulate_replication(TrialConfig(ErasureCode(2, 3), rates, 10))


def test_trial_config_validation():
    with pytest.raises(ValueError):
        TrialConfig(Replication(2), BlockFailureRates(0.6, 0.6), 10)
    with pytest.raises(ValueError):
        TrialConfig(Replication(2), BlockFailureRates(0.1), 0)
    with pytest.raises(ValueError):
        TrialConfig(Replication(2), BlockFailureRates(0.1), 10, seed=-1)


def test_estimate_within():
    e = Estimate(0.5, 1.959963984540054 * 0.01)
    assert e.sigma == pytest.approx(0.01)
    assert e.within(0.529) and not e.within(0.531)


def test_divergence_report_records_both_values():
    rep = divergence_report(ErasureCode(4, 6), BlockFailureRates(0.1, 0.01))
    assert rep["formula_p_lb_due"] == rep["exact_p_lb_due"]
    assert rep["formula_a_r"] == oracles.closed_ec_extra(F(1, 10), 4, 6)
    assert rep["formula_a_r"] > 40 > rep["exact_extra_given_success"]
    assert rep["formula_p_lb_nde"] != rep["exact_p_lb_nde"]
