"""Pick the weakest per-replica BCH code that still meets a logical-block target.

All comparisons against targets happen in the log domain, so sweeps can walk
into regions where the logical-block DUE probability underflows a double.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence, Union

from .model import (
    FIXED_TIER_MISS,
    NEG_INF,
    BchConfig,
    BlockGeometry,
    ErasureCode,
    RedundancyScheme,
    ReliabilityReport,
    Replication,
    _log,
    log_block_failure,
    log_cache_line_due,
    log_lb_due,
    log_lb_nde,
    replication_extra_reads,
    ec_extra_reads,
)

#: Parity of the fixed chipkill tier: 8 bytes per 64-byte block.
FIXED_TIER_OVERHEAD = 8 / 64
DEFAULT_K = 2048
DEFAULT_RBER = 2e-4
DEFAULT_TARGET = 1e-33
DEFAULT_T_MAX = 128

CHIPKILL = Replication(1)
CHIPKILL_REP = Replication(3)
CHIPKILL_EC = ErasureCode(4, 6)
DEFAULT_SCHEMES = (CHIPKILL, CHIPKILL_REP, CHIPKILL_EC)

NdeInput = Union[float, Callable[[int], float]]


class Unachievable(Exception):
    """No ``t <= t_max`` meets the targets."""

    def __init__(self, t_max: int, binding: str, best_log10: float, spec: "DesignSpec"):
        self.t_max = t_max
        self.binding = binding
        self.best_log10 = best_log10
        self.spec = spec
        super().__init__(
            f"{binding} target unreachable with t <= {t_max} "
            f"(scheme={spec.scheme.label}, k={spec.k}, rber={spec.rber!r}; "
            f"best log10 p_lb_{binding} = {best_log10:.4f})"
        )


@dataclass(frozen=True)
class DesignSpec:
    target_lb_due: float = DEFAULT_TARGET
    scheme: RedundancyScheme = CHIPKILL
    rber: float = DEFAULT_RBER
    k: int = DEFAULT_K
    # logical block; erasure codes split it into k fragments
    geom: BlockGeometry = field(default_factory=BlockGeometry)
    fixed_tier_overhead: float = FIXED_TIER_OVERHEAD
    fixed_tier_miss: float = FIXED_TIER_MISS
    target_lb_nde: float | None = None
    # cache-line NDE probability, constant or as a function of t
    p_c_nde: NdeInput = 0.0
    t_max: int = DEFAULT_T_MAX

    def __post_init__(self):
        if not 0 < self.target_lb_due < 1:
            raise ValueError("target_lb_due must lie in (0, 1)")
        if self.target_lb_nde is not None and not 0 < self.target_lb_nde < 1:
            raise ValueError("target_lb_nde must lie in (0, 1)")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.fixed_tier_overhead < 0:
            raise ValueError("fixed_tier_overhead must be >= 0")
        if self.t_max < 0:
            raise ValueError("t_max must be >= 0")
        self.physical_geom  # validates the fragment split

    @property
    def physical_geom(self) -> BlockGeometry:
        return self.scheme.physical_geometry(self.geom)

    def nde_line(self, t: int) -> float:
        return self.p_c_nde(t) if callable(self.p_c_nde) else self.p_c_nde


@dataclass(frozen=True)
class Evaluation:
    """Model output at one ``t``, kept in logs."""

    t: int
    bch: BchConfig
    log_p_c_due: float
    log_p_pb_due: float
    log_p_pb_nde: float
    log_p_lb_due: float
    log_p_lb_nde: float
    storage_overhead: float

    def report(self, scheme: RedundancyScheme) -> ReliabilityReport:
        p_pb = math.exp(self.log_p_pb_due)
        if isinstance(scheme, Replication):
            a_r = replication_extra_reads(p_pb, scheme.n) if p_pb < 1 else -1.0
        else:
            a_r = ec_extra_reads(p_pb, scheme.k, scheme.n)
        return ReliabilityReport(_safe_exp(self.log_p_lb_due), _safe_exp(self.log_p_lb_nde),
                                 a_r, self.log_p_lb_due)


@dataclass(frozen=True)
class DesignResult:
    t_star: int
    bch: BchConfig
    storage_overhead: float
    report: ReliabilityReport
    # which target forced t_star: "due" or "nde"
    binding: str
    # log p_lb_due at t_star - 1, None when t_star == 0
    witness_log_p_lb_due: float | None


def _safe_exp(x: float) -> float:
    return 0.0 if x == NEG_INF else math.exp(x)


def log10(x: float) -> float:
    return x / math.log(10.0)


def storage_overhead(bch: BchConfig, fixed_tier_overhead: float = FIXED_TIER_OVERHEAD) -> float:
    """Fixed-tier parity fraction plus the BCH parity fraction ``(n - k) / k``."""
    return fixed_tier_overhead + bch.parity_bits / bch.k


def evaluate_t(spec: DesignSpec, t: int) -> Evaluation:
    bch = BchConfig(spec.k, t)
    lines = spec.physical_geom.lines_per_block
    log_pc = log_cache_line_due(bch, spec.rber, spec.fixed_tier_miss)
    log_pb = log_block_failure(log_pc, lines)
    log_pb_nde = log_block_failure(_log(spec.nde_line(t)), lines)
    return Evaluation(
        t=t,
        bch=bch,
        log_p_c_due=log_pc,
        log_p_pb_due=log_pb,
        log_p_pb_nde=log_pb_nde,
        log_p_lb_due=log_lb_due(spec.scheme, log_pb),
        log_p_lb_nde=log_lb_nde(spec.scheme, log_pb, log_pb_nde),
        storage_overhead=storage_overhead(bch, spec.fixed_tier_overhead),
    )


def _meets(ev: Evaluation, spec: DesignSpec) -> tuple[bool, bool]:
    due_ok = ev.log_p_lb_due <= math.log(spec.target_lb_due)
    nde_ok = spec.target_lb_nde is None or ev.log_p_lb_nde <= math.log(spec.target_lb_nde)
    return due_ok, nde_ok


def minimize_t(spec: DesignSpec) -> DesignResult:
    """Smallest ``t`` meeting the DUE target (and the NDE target if set).

    A plain upward scan: each step costs a short tail sum, and scanning keeps
    the NDE constraint correct even when ``p_c_nde(t)`` is not monotone.
    """
    previous = None
    best_due = best_nde = NEG_INF
    due_ever = False
    for t in range(spec.t_max + 1):
        ev = evaluate_t(spec, t)
        due_ok, nde_ok = _meets(ev, spec)
        due_ever = due_ever or due_ok
        best_due = ev.log_p_lb_due if t == 0 else min(best_due, ev.log_p_lb_due)
        best_nde = ev.log_p_lb_nde if t == 0 else min(best_nde, ev.log_p_lb_nde)
        if due_ok and nde_ok:
            binding = "due"
            if previous is not None and _meets(previous, spec)[0]:
                binding = "nde"
            return DesignResult(
                t_star=t,
                bch=ev.bch,
                storage_overhead=ev.storage_overhead,
                report=ev.report(spec.scheme),
                binding=binding,
                witness_log_p_lb_due=None if previous is None else previous.log_p_lb_due,
            )
        previous = ev
    if due_ever:
        raise Unachievable(spec.t_max, "nde", log10(best_nde), spec)
    raise Unachievable(spec.t_max, "due", log10(best_due), spec)


def calibrate_k(candidates: Sequence[int] = (512, 1024, 2048, 4096),
                reference_overhead: float = 0.27,
                spec: DesignSpec | None = None) -> tuple[int, list[dict]]:
    """Pick the BCH data length whose single-replica overhead lands nearest
    ``reference_overhead``; ties go to the smaller overhead, then smaller k."""
    spec = spec or DesignSpec()
    rows = []
    for k in candidates:
        res = minimize_t(replace(spec, k=k, scheme=CHIPKILL))
        rows.append({"k": k, "t_star": res.t_star, "storage_overhead": res.storage_overhead,
                     "distance": abs(res.storage_overhead - reference_overhead)})
    best = min(rows, key=lambda r: (r["distance"], r["storage_overhead"], r["k"]))
    return best["k"], rows


def _ordered_map(fn, items: Iterable, workers: int | None):
    items = list(items)
    if not workers or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sweep_due_vs_overhead(base: DesignSpec, t_values: Iterable[int],
                          schemes: Sequence[RedundancyScheme] = DEFAULT_SCHEMES,
                          workers: int | None = None) -> list[dict]:
    """DUE against storage overhead, one row per (scheme, t).

    The NDE column is the single-replica physical-block NDE, which does not
    depend on the replication scheme.
    """
    t_values = list(t_values)
    baseline = replace(base, scheme=CHIPKILL)

    def rows_for(scheme):
        spec = replace(base, scheme=scheme)
        out = []
        for t in t_values:
            ev = evaluate_t(spec, t)
            nde = evaluate_t(baseline, t).log_p_pb_nde
            out.append({
                "scheme": scheme.label,
                "t": t,
                "n": ev.bch.n,
                "storage_overhead": ev.storage_overhead,
                "p_lb_due": _safe_exp(ev.log_p_lb_due),
                "log10_p_lb_due": log10(ev.log_p_lb_due),
                "p_pb_nde_baseline": _safe_exp(nde),
                "log10_p_pb_nde_baseline": log10(nde),
            })
        return out

    return [row for block in _ordered_map(rows_for, schemes, workers) for row in block]


def sweep_overhead_vs_replicas(base: DesignSpec, n_values: Iterable[int],
                               ec_k: int | None = 4,
                               workers: int | None = None) -> list[dict]:
    """Overhead needed at ``base.target_lb_due`` as the replica count grows.

    With ``ec_k`` set, an RS(ec_k, ec_k + n - 1) row is added per ``n``: the
    erasure code tolerating the same ``n - 1`` lost fragments.
    """
    n_values = list(n_values)
    for n in n_values:
        if not 1 <= n <= 16:
            raise ValueError("replica counts must lie in [1, 16]")
    schemes = [Replication(n) for n in n_values]
    if ec_k is not None:
        schemes += [ErasureCode(ec_k, ec_k + n - 1) for n in n_values]
    results = _ordered_map(lambda s: minimize_t(replace(base, scheme=s)), schemes, workers)
    single = minimize_t(replace(base, scheme=CHIPKILL)).storage_overhead
    rows = []
    for family, offset in (("rep", 0), ("ec", len(n_values))):
        if family == "ec" and ec_k is None:
            break
        prev = None
        for i, n in enumerate(n_values):
            res = results[offset + i]
            scheme = schemes[offset + i]
            rows.append({
                "family": family,
                "scheme": scheme.label,
                "replicas": n,
                "t_star": res.t_star,
                "storage_overhead": res.storage_overhead,
                "saving_vs_single": single - res.storage_overhead,
                "marginal_saving": "" if prev is None else prev - res.storage_overhead,
            })
            prev = res.storage_overhead
    return rows


def sweep_overhead_vs_rber(base: DesignSpec, rber_values: Iterable[float],
                           schemes: Sequence[RedundancyScheme] = (CHIPKILL_REP, CHIPKILL_EC),
                           workers: int | None = None) -> list[dict]:
    """Single-replica and redundant-scheme overhead per RBER, plus the saving."""
    rber_values = list(rber_values)
    for r in rber_values:
        if not 0 < r <= 0.1:
            raise ValueError("rber values must lie in (0, 0.1]")

    def row_for(rber):
        spec = replace(base, rber=rber)
        single = minimize_t(replace(spec, scheme=CHIPKILL))
        row = {"rber": rber, "t_single": single.t_star, "overhead_single": single.storage_overhead}
        for scheme in schemes:
            res = minimize_t(replace(spec, scheme=scheme))
            row[f"t_{scheme.label}"] = res.t_star
            row[f"overhead_{scheme.label}"] = res.storage_overhead
            row[f"saving_{scheme.label}"] = single.storage_overhead - res.storage_overhead
        return row

    return _ordered_map(row_for, rber_values, workers)
