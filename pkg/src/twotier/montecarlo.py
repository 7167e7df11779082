"""Stochastic and exhaustive oracles for the logical-block read protocols.

Both protocols share one read strategy. Physical blocks are tried in the
fixed order ``0 .. n-1`` until ``k`` of them have been read without a DUE:

* replication is the ``k = 1`` case (primary, then each backup in turn);
* RS(k, n) issues ``k`` reads and replaces each failed read with the next
  untried fragment until ``k`` succeed or the fragments run out.

Each block is independently DUE with probability ``p_pb_due``, otherwise NDE
with probability ``p_pb_nde``, otherwise clean. A logical read is an NDE when
one of the blocks it finally uses is NDE. ``extra reads`` counts physical
reads beyond the first ``k``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _accel
from ._accel import njit
from ._rng import uniform_nb, uniform_np
from .model import (
    BlockFailureRates,
    ErasureCode,
    RedundancyScheme,
    Replication,
    as_fraction,
    evaluate,
)

try:
    import numba
    _prange = numba.prange
except ImportError:  # pragma: no cover
    _prange = range

Z95 = 1.959963984540054
MAX_ENUM_BLOCKS = 20
_CHUNK = 1 << 20

# counter word used for per-block draws: uniform(seed, trial, block, _DRAW)
_DRAW = 0


@dataclass(frozen=True)
class TrialConfig:
    scheme: RedundancyScheme
    rates: BlockFailureRates
    trials: int
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if float(self.rates.p_pb_due) + float(self.rates.p_pb_nde) > 1:
            raise ValueError("DUE and NDE are disjoint per block: p_pb_due + p_pb_nde <= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Estimate:
    value: float
    ci95: float  # half-width, normal approximation

    @property
    def sigma(self) -> float:
        return self.ci95 / Z95

    def within(self, truth: float, n_sigma: float = 3.0) -> bool:
        return abs(self.value - truth) <= n_sigma * self.sigma


@dataclass(frozen=True)
class TrialReport:
    est_p_lb_due: Estimate
    est_p_lb_nde: Estimate
    est_extra_reads_unconditional: Estimate
    est_extra_reads_given_success: Estimate
    trials: int
    seed: int
    failures: int
    nde_reads: int


@dataclass(frozen=True)
class ExactReport:
    p_lb_due: Fraction
    p_lb_nde: Fraction
    extra_reads_unconditional: Fraction
    extra_reads_given_success: Fraction | None


# ---------------------------------------------------------------------------
# kernels


@njit(parallel=True)
def _read_trials_numba(seed, k, n, p_due, p_nde, trials):
    fail = 0
    nde = 0
    extra_all = 0
    extra_all_sq = 0
    extra_ok = 0
    extra_ok_sq = 0
    limit = p_due + p_nde
    for trial in _prange(trials):
        good = 0
        saw_nde = 0
        reads = n
        for j in range(n):
            u = uniform_nb(seed, trial, j, _DRAW)
            if u < p_due:
                continue
            if u < limit:
                saw_nde = 1
            good += 1
            if good == k:
                reads = j + 1
                break
        extra = reads - k
        extra_all += extra
        extra_all_sq += extra * extra
        if good < k:
            fail += 1
        else:
            nde += saw_nde
            extra_ok += extra
            extra_ok_sq += extra * extra
    return fail, nde, extra_all, extra_all_sq, extra_ok, extra_ok_sq


def _read_trials_numpy(seed, k, n, p_due, p_nde, trials):
    fail = nde = extra_all = extra_all_sq = extra_ok = extra_ok_sq = 0
    limit = p_due + p_nde
    blocks = np.arange(n, dtype=np.uint64)
    for start in range(0, trials, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, trials), dtype=np.uint64)
        u = uniform_np(seed, idx[:, None], blocks[None, :], _DRAW)
        ok = u >= p_due
        is_nde = ok & (u < limit)
        good = np.cumsum(ok, axis=1)
        success = good[:, -1] >= k
        kth = np.argmax(good >= k, axis=1)
        reads = np.where(success, kth + 1, n)
        used = ok & (blocks[None, :].astype(np.int64) <= kth[:, None]) & success[:, None]
        saw_nde = np.any(is_nde & used, axis=1)
        extra = (reads - k).astype(np.int64)
        fail += int(np.count_nonzero(~success))
        nde += int(np.count_nonzero(saw_nde))
        extra_all += int(extra.sum())
        extra_all_sq += int((extra * extra).sum())
        extra_ok += int(extra[success].sum())
        extra_ok_sq += int((extra[success] ** 2).sum())
    return fail, nde, extra_all, extra_all_sq, extra_ok, extra_ok_sq


def _proportion(count: int, trials: int) -> Estimate:
    p = count / trials
    return Estimate(p, Z95 * math.sqrt(p * (1 - p) / trials))


def _mean(total: int, total_sq: int, count: int) -> Estimate:
    if count == 0:
        return Estimate(float("nan"), float("nan"))
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0)
    if count > 1:
        var *= count / (count - 1)
    return Estimate(mean, Z95 * math.sqrt(var / count))


def _shape(scheme: RedundancyScheme) -> tuple[int, int]:
    if isinstance(scheme, Replication):
        return 1, scheme.n
    if isinstance(scheme, ErasureCode):
        return scheme.k, scheme.n
    raise TypeError(f"unknown redundancy scheme {scheme!r}")


def simulate(cfg: TrialConfig, backend: str | None = None) -> TrialReport:
    k, n = _shape(cfg.scheme)
    p_due, p_nde = float(cfg.rates.p_pb_due), float(cfg.rates.p_pb_nde)
    if _accel.resolve_backend(backend) == "numba":
        counts = _read_trials_numba(np.uint64(cfg.seed), k, n, p_due, p_nde, cfg.trials)
    else:
        counts = _read_trials_numpy(cfg.seed, k, n, p_due, p_nde, cfg.trials)
    fail, nde, extra_all, extra_all_sq, extra_ok, extra_ok_sq = (int(c) for c in counts)
    ok = cfg.trials - fail
    return TrialReport(
        est_p_lb_due=_proportion(fail, cfg.trials),
        est_p_lb_nde=_proportion(nde, cfg.trials),
        est_extra_reads_unconditional=_mean(extra_all, extra_all_sq, cfg.trials),
        est_extra_reads_given_success=_mean(extra_ok, extra_ok_sq, ok),
        trials=cfg.trials,
        seed=cfg.seed,
        failures=fail,
        nde_reads=nde,
    )


def simulate_replication(cfg: TrialConfig, backend: str | None = None) -> TrialReport:
    if not isinstance(cfg.scheme, Replication):
        raise TypeError("simulate_replication needs a Replication scheme")
    return simulate(cfg, backend)


def simulate_ec(cfg: TrialConfig, backend: str | None = None) -> TrialReport:
    if not isinstance(cfg.scheme, ErasureCode):
        raise TypeError("simulate_ec needs an ErasureCode scheme")
    return simulate(cfg, backend)


# ---------------------------------------------------------------------------
# exhaustive enumeration


def enumerate_exact(scheme: RedundancyScheme, rates: BlockFailureRates) -> ExactReport:
    """Exact protocol outcome by summing over all 2^n DUE patterns.

    NDE is folded in analytically per pattern: each of the ``k`` blocks used
    by a successful read is, given it was not a DUE, an NDE with probability
    ``p_nde / (1 - p_due)``.
    """
    k, n = _shape(scheme)
    if n > MAX_ENUM_BLOCKS:
        raise ValueError(f"enumeration is limited to n <= {MAX_ENUM_BLOCKS}")
    p_due, p_nde = as_fraction(rates.p_pb_due), as_fraction(rates.p_pb_nde)
    if p_due + p_nde > 1:
        raise ValueError("p_pb_due + p_pb_nde must not exceed 1")
    clean_given_ok = 1 - p_nde / (1 - p_due) if p_due < 1 else Fraction(1)

    p_fail = p_nde_total = extra_total = extra_ok = Fraction(0)
    for pattern in itertools.product((False, True), repeat=n):  # True = DUE
        n_due = sum(pattern)
        weight = p_due**n_due * (1 - p_due) ** (n - n_due)
        if weight == 0:
            continue
        good = 0
        reads = n
        for j, due in enumerate(pattern):
            if not due:
                good += 1
                if good == k:
                    reads = j + 1
                    break
        extra_total += weight * (reads - k)
        if good < k:
            p_fail += weight
        else:
            extra_ok += weight * (reads - k)
            p_nde_total += weight * (1 - clean_given_ok**k)
    p_ok = 1 - p_fail
    return ExactReport(
        p_lb_due=p_fail,
        p_lb_nde=p_nde_total,
        extra_reads_unconditional=extra_total,
        extra_reads_given_success=extra_ok / p_ok if p_ok else None,
    )


def divergence_report(scheme: RedundancyScheme, rates: BlockFailureRates) -> dict:
    """Closed-form values side by side with enumeration truth (all exact)."""
    exact_rates = BlockFailureRates(as_fraction(rates.p_pb_due), as_fraction(rates.p_pb_nde))
    formula = evaluate(scheme, exact_rates)
    truth = enumerate_exact(scheme, exact_rates)
    return {
        "scheme": scheme.label,
        "p_pb_due": exact_rates.p_pb_due,
        "p_pb_nde": exact_rates.p_pb_nde,
        "formula_p_lb_due": formula.p_lb_due,
        "exact_p_lb_due": truth.p_lb_due,
        "formula_p_lb_nde": formula.p_lb_nde,
        "exact_p_lb_nde": truth.p_lb_nde,
        "formula_a_r": formula.a_r,
        "exact_extra_unconditional": truth.extra_reads_unconditional,
        "exact_extra_given_success": truth.extra_reads_given_success,
    }
