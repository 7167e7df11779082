"""Closed-form reliability model for two-tier memory protection.

Tier 1 is a per-replica chipkill design: a fixed opportunistic code backed by
a configurable BCH(n, k, t) code. Tier 2 is rack-scale replication or
Reed-Solomon erasure coding over physical blocks.

Every operation accepts either floats or :class:`fractions.Fraction`. Float
inputs are evaluated in the natural-log domain so that probabilities such as
1e-33 (or far below the double range, through the ``log_*`` variants) keep
full relative precision. When all inputs are rationals the closed-form sums are
evaluated exactly, which is what the enumeration oracles compare against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

Number = Union[float, Fraction]

#: Probability that the fixed-protection code fails to correct a bit error.
FIXED_TIER_MISS = 0.018

NEG_INF = float("-inf")
_LN2 = math.log(2.0)
# Terms this far (in nats) below the running sum are dropped from a tail.
_TAIL_CUTOFF = 80.0


# ---------------------------------------------------------------------------
# log-domain helpers


def log1mexp(x: float) -> float:
    """``log(1 - exp(x))`` for ``x <= 0`` without cancellation."""
    if x > 0.0:
        raise ValueError("log1mexp needs x <= 0")
    if x == 0.0:
        return NEG_INF
    if x > -_LN2:
        return math.log(-math.expm1(x))
    return math.log1p(-math.exp(x))


def logsumexp(values) -> float:
    values = [v for v in values if v != NEG_INF]
    if not values:
        return NEG_INF
    top = max(values)
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def _log(p: float) -> float:
    return NEG_INF if p == 0 else math.log(p)


def _log_complement(p: float) -> float:
    return NEG_INF if p == 1 else math.log1p(-p)


def _mul(count: int, logp: float) -> float:
    # count * log(p) with the convention 0 * log(0) = 0
    return 0.0 if count == 0 else count * logp


def _exp(x: float) -> float:
    return 0.0 if x == NEG_INF else math.exp(x)


def _is_exact(*values) -> bool:
    return any(isinstance(v, Fraction) for v in values) and all(
        isinstance(v, (Fraction, int)) for v in values
    )


def as_fraction(x) -> Fraction:
    """Rational view of ``x``; floats are read through their shortest repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


def _check_prob(name: str, p) -> None:
    if not 0 <= p <= 1:
        raise ValueError(f"{name} must lie in [0, 1], got {p!r}")


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class BlockGeometry:
    """Cache-line size ``c`` and block size ``b``, both in bytes."""

    cache_line_bytes: int = 64
    block_bytes: int = 4096

    def __post_init__(self):
        if self.cache_line_bytes <= 0 or self.block_bytes <= 0:
            raise ValueError("block and cache-line sizes must be positive")
        if self.block_bytes % self.cache_line_bytes:
            raise ValueError(
                f"block size {self.block_bytes} is not a multiple of the "
                f"cache-line size {self.cache_line_bytes}"
            )

    @property
    def lines_per_block(self) -> int:
        return self.block_bytes // self.cache_line_bytes

    def split(self, parts: int) -> "BlockGeometry":
        """Geometry of one of ``parts`` equal fragments of this block."""
        if parts < 1 or self.block_bytes % parts:
            raise ValueError(f"cannot split {self.block_bytes}B into {parts} fragments")
        return BlockGeometry(self.cache_line_bytes, self.block_bytes // parts)


def bch_codeword_length(k: int, t: int) -> int:
    """Codeword length ``k + t * (ceil(log2 k) + 1)`` of a t-correcting BCH code."""
    if k < 2:
        raise ValueError(f"BCH data length k must be >= 2, got {k}")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return k + t * ((k - 1).bit_length() + 1)


@dataclass(frozen=True)
class BchConfig:
    k: int
    t: int

    def __post_init__(self):
        bch_codeword_length(self.k, self.t)

    @property
    def n(self) -> int:
        return bch_codeword_length(self.k, self.t)

    @property
    def parity_bits(self) -> int:
        return self.n - self.k


@dataclass(frozen=True)
class ErrorRates:
    """Per-cache-line failure probabilities; ``derived`` records their provenance."""

    rber: Number
    p_c_due: Number
    p_c_nde: Number = 0.0
    derived: bool = False

    def __post_init__(self):
        for name in ("rber", "p_c_due", "p_c_nde"):
            _check_prob(name, getattr(self, name))

    @classmethod
    def from_rber(cls, bch: BchConfig, rber: Number, p_c_nde: Number = 0.0,
                  miss: Number = FIXED_TIER_MISS) -> "ErrorRates":
        return cls(rber, cache_line_due(bch, rber, miss), p_c_nde, derived=True)


@dataclass(frozen=True)
class BlockFailureRates:
    p_pb_due: Number
    p_pb_nde: Number = 0.0

    def __post_init__(self):
        _check_prob("p_pb_due", self.p_pb_due)
        _check_prob("p_pb_nde", self.p_pb_nde)


@dataclass(frozen=True)
class Replication:
    """Primary plus ``n - 1`` backups, read in sequence until one succeeds."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"replication needs n >= 1, got {self.n}")

    @property
    def k(self) -> int:
        return 1

    @property
    def label(self) -> str:
        return f"rep{self.n}"

    def physical_geometry(self, logical: BlockGeometry) -> BlockGeometry:
        return logical


@dataclass(frozen=True)
class ErasureCode:
    """RS(k, n): ``k`` data fragments plus ``n - k`` parity fragments."""

    k: int
    n: int

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise ValueError(f"erasure code needs 1 <= k <= n, got k={self.k}, n={self.n}")

    @property
    def r(self) -> int:
        return self.n - self.k

    @property
    def label(self) -> str:
        return f"ec{self.k}-{self.n}"

    def physical_geometry(self, logical: BlockGeometry) -> BlockGeometry:
        return logical.split(self.k)


RedundancyScheme = Union[Replication, ErasureCode]


@dataclass(frozen=True)
class ReliabilityReport:
    p_lb_due: Number
    p_lb_nde: Number
    a_r: Number
    # natural log of p_lb_due; stays finite where the float underflows
    log_p_lb_due: float | None = None


# ---------------------------------------------------------------------------
# tier 1: cache line and physical block


def log_binomial_pmf(i: int, n: int, logp: float, logq: float) -> float:
    if not 0 <= i <= n:
        return NEG_INF
    return math.log(math.comb(n, i)) + _mul(i, logp) + _mul(n - i, logq)


def log_binomial_tail(n: int, j: int, p: float) -> float:
    """``log P[Binomial(n, p) >= j]``.

    Sums from whichever end of the distribution keeps the terms decreasing,
    so only a handful of terms are ever needed in the rare-event regime.
    """
    _check_prob("p", p)
    if j <= 0:
        return 0.0
    if j > n or p == 0:
        return NEG_INF
    if p == 1:
        return 0.0
    logp, logq = math.log(p), math.log1p(-p)
    step_up = logp - logq
    if j > n * p:
        # terms decrease from i = j upwards
        term = log_binomial_pmf(j, n, logp, logq)
        terms = [term]
        for i in range(j, n):
            term += math.log(n - i) - math.log(i + 1) + step_up
            terms.append(term)
            if term < terms[0] - _TAIL_CUTOFF:
                break
        return logsumexp(terms)
    # terms decrease from i = j - 1 downwards; take the complement
    term = log_binomial_pmf(j - 1, n, logp, logq)
    terms = [term]
    for i in range(j - 1, 0, -1):
        term += math.log(i) - math.log(n - i + 1) - step_up
        terms.append(term)
        if term < terms[0] - _TAIL_CUTOFF:
            break
    return log1mexp(min(logsumexp(terms), 0.0))


def log_cache_line_due(bch: BchConfig, rber: float, miss: float = FIXED_TIER_MISS) -> float:
    """Natural log of :func:`cache_line_due`; finite far below 1e-308."""
    _check_prob("rber", rber)
    return _log(miss) + log_binomial_tail(bch.n, bch.t + 1, rber)


def cache_line_due(bch: BchConfig, rber: Number, miss: Number = FIXED_TIER_MISS) -> Number:
    """Cache-line DUE probability: ``miss * P[Binomial(n, rber) >= t + 1]``.

    The tail starts at ``t + 1`` errors, one more than the code corrects.
    """
    _check_prob("rber", rber)
    if _is_exact(rber) or isinstance(miss, Fraction):
        rber, miss = as_fraction(rber), as_fraction(miss)
        n, t = bch.n, bch.t
        if t >= n:
            return Fraction(0)
        q = 1 - rber
        head = sum(math.comb(n, i) * rber**i * q ** (n - i) for i in range(t + 1))
        return miss * (1 - head)
    return _exp(log_cache_line_due(bch, rber, miss))


def log_block_failure(log_p_line: float, lines: int) -> float:
    """``log(1 - (1 - p)^lines)`` given ``log p``."""
    if lines < 1:
        raise ValueError("a block holds at least one cache line")
    return log1mexp(lines * log1mexp(log_p_line))


def block_failure(p_line: Number, lines: int) -> Number:
    if lines < 1:
        raise ValueError("a block holds at least one cache line")
    if _is_exact(p_line):
        return 1 - (1 - p_line) ** lines
    if p_line == 1:
        return 1.0
    return -math.expm1(lines * math.log1p(-p_line))


def physical_block_rates(cell: ErrorRates, geom: BlockGeometry) -> BlockFailureRates:
    """Probability that reading one physical block hits a DUE / an NDE."""
    m = geom.lines_per_block
    return BlockFailureRates(block_failure(cell.p_c_due, m), block_failure(cell.p_c_nde, m))


# ---------------------------------------------------------------------------
# tier 2: replication


def log_replication_due(log_p: float, n: int) -> float:
    return _mul(n, log_p)


def replication_due(p: Number, n: int) -> Number:
    """All ``n`` physical reads fail: ``p ** n``."""
    _check_prob("p", p)
    if n < 1:
        raise ValueError("n must be >= 1")
    if _is_exact(p):
        return p**n
    return _exp(log_replication_due(_log(p), n))


def log_replication_nde(log_p_due: float, log_p_nde: float, n: int) -> float:
    logq = log1mexp(log_p_due)
    return log_p_nde + logsumexp(_mul(i, logq) for i in range(n))


def replication_nde(p_due: Number, p_nde: Number, n: int) -> Number:
    """``sum_{i<n} (1 - p_due)^i * p_nde``, the closed-form union expression."""
    _check_prob("p_due", p_due)
    _check_prob("p_nde", p_nde)
    if n < 1:
        raise ValueError("n must be >= 1")
    if _is_exact(p_due, p_nde):
        return sum(((1 - p_due) ** i * p_nde for i in range(n)), Fraction(0))
    q = 1.0 - p_due
    return math.fsum(q**i for i in range(n)) * p_nde


def replication_extra_reads(p: Number, n: int) -> Number:
    """Closed form ``-1 + sum_{i<n} p^i (1 - p) (i + 1)``.

    The float path uses the telescoped form ``sum_{i=1}^{n-1} p^i - n p^n``,
    which is algebraically identical and free of the ``-1 + (1 - O(p))``
    cancellation at small ``p``. Note that ``n = 1`` gives ``-p``.
    """
    _check_prob("p", p)
    if n < 1:
        raise ValueError("n must be >= 1")
    if p == 1:
        raise ValueError("extra-read formula degenerates at p = 1")
    if _is_exact(p):
        return -1 + sum((p**i * (1 - p) * (i + 1) for i in range(n)), Fraction(0))
    return math.fsum([p**i for i in range(1, n)] + [-n * p**n])


# ---------------------------------------------------------------------------
# tier 2: erasure coding


def binomial_pmf(i: int, n: int, p: Number) -> Number:
    """``f(i, n, p) = C(n, i) p^i (1 - p)^(n - i)``."""
    _check_prob("p", p)
    if not 0 <= i <= n:
        raise ValueError(f"need 0 <= i <= n, got i={i}, n={n}")
    if _is_exact(p):
        return math.comb(n, i) * p**i * (1 - p) ** (n - i)
    return _exp(log_binomial_pmf(i, n, _log(p), _log_complement(p)))


def _check_ec(k: int, n: int) -> None:
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")


def log_ec_due(log_p: float, k: int, n: int, log_q: float | None = None) -> float:
    _check_ec(k, n)
    if log_q is None:
        log_q = log1mexp(log_p)
    return logsumexp(log_binomial_pmf(i, n, log_p, log_q) for i in range(n - k + 1, n + 1))


def ec_due(p: Number, k: int, n: int) -> Number:
    """At least ``n - k + 1`` of the ``n`` fragments fail."""
    _check_prob("p", p)
    _check_ec(k, n)
    if _is_exact(p):
        return sum((binomial_pmf(i, n, p) for i in range(n - k + 1, n + 1)), Fraction(0))
    return _exp(log_ec_due(_log(p), k, n, _log_complement(p)))


def _ec_nde_inner_log(log_p_nde: float, log_q_nde: float, k: int) -> float:
    return logsumexp(log_binomial_pmf(j, k - 1, log_p_nde, log_q_nde) for j in range(1, k))


def _ec_weight_log(i: int, k: int, n: int, log_p: float, log_q: float) -> float:
    return math.log(math.comb(n, k + i)) + log_binomial_pmf(i, k + i - 1, log_p, log_q)


def log_ec_nde(log_p_due: float, log_p_nde: float, k: int, n: int) -> float:
    _check_ec(k, n)
    log_q_due, log_q_nde = log1mexp(log_p_due), log1mexp(log_p_nde)
    outer = logsumexp(_ec_weight_log(i, k, n, log_p_due, log_q_due) for i in range(n - k + 1))
    return outer + _ec_nde_inner_log(log_p_nde, log_q_nde, k)


def ec_nde(p_due: Number, p_nde: Number, k: int, n: int) -> Number:
    """Closed-form double sum; the inner sum is empty (result 0) for ``k = 1``."""
    _check_prob("p_due", p_due)
    _check_prob("p_nde", p_nde)
    _check_ec(k, n)
    if _is_exact(p_due, p_nde):
        outer = sum((math.comb(n, k + i) * binomial_pmf(i, k + i - 1, p_due)
                     for i in range(n - k + 1)), Fraction(0))
        inner = sum((binomial_pmf(j, k - 1, p_nde) for j in range(1, k)), Fraction(0))
        return outer * inner
    if k == 1 or p_nde == 0:
        return 0.0
    log_p, log_q = _log(p_due), _log_complement(p_due)
    outer = logsumexp(_ec_weight_log(i, k, n, log_p, log_q) for i in range(n - k + 1))
    inner = _ec_nde_inner_log(_log(p_nde), _log_complement(p_nde), k)
    return _exp(outer + inner)


def ec_extra_reads(p: Number, k: int, n: int) -> Number:
    """Closed form ``-k + sum_i C(n, k+i) f(i, k+i-1, p) (k+i)``, term for term.

    The combinatorial prefactor is not a probability weight, so the value is
    not an expected read count (``p = 0, k = 4, n = 6`` gives 56).
    """
    _check_prob("p", p)
    _check_ec(k, n)
    if _is_exact(p):
        return -k + sum((math.comb(n, k + i) * binomial_pmf(i, k + i - 1, p) * (k + i)
                         for i in range(n - k + 1)), Fraction(0))
    log_p, log_q = _log(p), _log_complement(p)
    terms = [_exp(_ec_weight_log(i, k, n, log_p, log_q)) * (k + i) for i in range(n - k + 1)]
    return math.fsum(terms + [-k])


# ---------------------------------------------------------------------------
# dispatch


def evaluate(scheme: RedundancyScheme, rates: BlockFailureRates) -> ReliabilityReport:
    """Logical-block DUE, NDE and extra reads for ``scheme``."""
    p_due, p_nde = rates.p_pb_due, rates.p_pb_nde
    exact = _is_exact(p_due, p_nde)
    if isinstance(scheme, Replication):
        due = replication_due(p_due, scheme.n)
        nde = replication_nde(p_due, p_nde, scheme.n)
        a_r = replication_extra_reads(p_due, scheme.n) if p_due != 1 else -1
        log_due = None if exact else log_replication_due(_log(p_due), scheme.n)
    elif isinstance(scheme, ErasureCode):
        due = ec_due(p_due, scheme.k, scheme.n)
        nde = ec_nde(p_due, p_nde, scheme.k, scheme.n)
        a_r = ec_extra_reads(p_due, scheme.k, scheme.n)
        log_due = None if exact else log_ec_due(_log(p_due), scheme.k, scheme.n,
                                                _log_complement(p_due))
    else:
        raise TypeError(f"unknown redundancy scheme {scheme!r}")
    return ReliabilityReport(due, nde, a_r, log_due)


def log_lb_due(scheme: RedundancyScheme, log_p_pb_due: float) -> float:
    if isinstance(scheme, Replication):
        return log_replication_due(log_p_pb_due, scheme.n)
    return log_ec_due(log_p_pb_due, scheme.k, scheme.n)


def log_lb_nde(scheme: RedundancyScheme, log_p_pb_due: float, log_p_pb_nde: float) -> float:
    if log_p_pb_nde == NEG_INF:
        return NEG_INF
    if isinstance(scheme, Replication):
        return log_replication_nde(log_p_pb_due, log_p_pb_nde, scheme.n)
    if scheme.k == 1:
        return NEG_INF
    return log_ec_nde(log_p_pb_due, log_p_pb_nde, scheme.k, scheme.n)
