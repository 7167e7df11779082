"""Command-line interface.

Every command writes a CSV table (header row first) to ``--out`` or stdout.
When ``--out`` is given, a run manifest ``<out>.manifest.json`` is written
next to it; ``twotier replay <manifest>`` re-runs the command from the
manifest and checks the output checksums.

Config files (``--config``) are flat ``key = value`` lines. Keys are long
option names with or without the leading dashes (``rber = 2e-4`` or
``--t-max = 64``); ``#`` starts a comment; flags given on the command line
override the file.

Exit status: 0 success, 1 domain error (for instance an unreachable design
target or a replay mismatch), 2 usage error.

Environment: ``TWOTIER_SEED`` and ``TWOTIER_WORKERS`` set the default seed
and sweep worker count.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from fractions import Fraction

import numpy as np

from . import __version__, design, montecarlo, racksim
from .model import (
    BchConfig,
    BlockFailureRates,
    BlockGeometry,
    ErasureCode,
    ErrorRates,
    FIXED_TIER_MISS,
    Replication,
    as_fraction,
    evaluate,
    log_lb_due,
    physical_block_rates,
)

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
MANIFEST_SCHEMA = 1
# columns holding probabilities get 9 significant digits by default
_PROB_COLUMN = re.compile(r"(^|_)p_|^(estimate|analytical|exact|ci95)$")
_INTERNAL = {"_handler", "_parser", "config", "out", "manifest"}


class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument types


def int_range(text: str) -> list[int]:
    """``"1..8"``, ``"0..40:5"`` or ``"1,2,4"``."""
    text = text.strip()
    m = re.fullmatch(r"(-?\d+)\.\.(-?\d+)(?::(\d+))?", text)
    try:
        if m:
            lo, hi, step = int(m[1]), int(m[2]), int(m[3] or 1)
            if step < 1 or hi < lo:
                raise ValueError
            return list(range(lo, hi + 1, step))
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer range: {text!r}") from None


def float_list(text: str) -> list[float]:
    """``"1e-9..1e-2"`` (one point per decade, endpoints must be powers of
    ten), ``"1e-9..1e-2:2"`` (two points per decade) or ``"1e-5,2e-4"``."""
    text = text.strip()
    try:
        if ".." in text:
            span, _, per = text.partition(":")
            lo, hi = (float(x) for x in span.split(".."))
            per = int(per or 1)
            a, b = math.log10(lo), math.log10(hi)
            if per < 1 or b < a or abs(a - round(a)) > 1e-12 or abs(b - round(b)) > 1e-12:
                raise ValueError
            steps = round((b - a) * per)
            return [float(f"1e{round(a) + i / per:.12g}") if per == 1 else 10.0 ** (a + i / per)
                    for i in range(steps + 1)]
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None


def scheme_list(text: str) -> list[str]:
    out = []
    for label in text.split(","):
        parse_scheme_label(label)
        out.append(label.strip())
    return out


def parse_scheme_label(label: str):
    """``rep3`` or ``ec4-6``."""
    label = label.strip()
    m = re.fullmatch(r"rep(\d+)", label)
    try:
        if m:
            return Replication(int(m[1]))
        m = re.fullmatch(r"ec(\d+)-(\d+)", label)
        if m:
            return ErasureCode(int(m[1]), int(m[2]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    raise argparse.ArgumentTypeError(f"scheme labels look like rep3 or ec4-6, got {label!r}")


def probability(text: str) -> float:
    v = float(text)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"probability out of [0, 1]: {text}")
    return v


def optional_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


def optional_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {raw!r}") from None


def _to_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


# ---------------------------------------------------------------------------
# output


def _fmt(key: str, value, precision: str) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if precision == "9" and _PROB_COLUMN.search(key):
            return f"{value:.8e}"
        return repr(value)
    return str(value)


def _log10_of(value) -> float:
    if isinstance(value, Fraction):
        if value <= 0:
            return float("-inf")
        # exact ratio can underflow a float, so subtract the logs
        return (math.log10(value.numerator) if value.numerator < 2**1000 else
                value.numerator.bit_length() * math.log10(2)) - \
               (math.log10(value.denominator) if value.denominator < 2**1000 else
                value.denominator.bit_length() * math.log10(2))
    value = float(value)
    return math.log10(value) if value > 0 else float("-inf")


def add_log10_columns(rows: list[dict]) -> list[dict]:
    out = []
    for row in rows:
        new = {}
        for key, value in row.items():
            new[key] = value
            log_key = f"log10_{key}"
            if (_PROB_COLUMN.search(key) and not key.startswith("log10_") and log_key not in row
                    and isinstance(value, (float, Fraction, np.floating))):
                new[log_key] = _log10_of(value)
        out.append(new)
    return out


def render_csv(rows: list[dict], precision: str = "9") -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    header = list(rows[0])
    for row in rows[1:]:
        for key in row:
            if key not in header:
                header.append(key)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(k, row.get(k), precision) for k in header])
    return buf.getvalue()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# command handlers; each returns (rows, side_files) where side_files maps
# path -> text for extra outputs such as event traces


def _scheme_from(kind: str, n: int | None, k: int | None):
    if kind == "rep":
        return Replication(3 if n is None else n)
    if kind == "ec":
        return ErasureCode(4 if k is None else k, 6 if n is None else n)
    raise UsageError(f"unknown scheme {kind!r}")


def cmd_model(ns):
    scheme = _scheme_from(ns.scheme, ns.n, ns.k)
    if ns.p_pb_due is None:
        if ns.rber is None or ns.t is None:
            raise UsageError("give --p-pb-due, or --rber and --t to derive it")
        geom = scheme.physical_geometry(BlockGeometry(ns.line_bytes, ns.block_bytes))
        cell = ErrorRates.from_rber(BchConfig(ns.bch_k, ns.t), ns.rber, ns.p_c_nde, miss=ns.miss)
        rates = physical_block_rates(cell, geom)
    else:
        rates = BlockFailureRates(ns.p_pb_due, ns.p_pb_nde)
    row = {"scheme": scheme.label, "p_pb_due": float(rates.p_pb_due),
           "p_pb_nde": float(rates.p_pb_nde)}
    if ns.exact:
        if scheme.n > montecarlo.MAX_ENUM_BLOCKS:
            raise UsageError(f"--exact needs n <= {montecarlo.MAX_ENUM_BLOCKS}")
        report = montecarlo.divergence_report(scheme, rates)
        for key in ("formula_p_lb_due", "exact_p_lb_due", "formula_p_lb_nde", "exact_p_lb_nde",
                    "formula_a_r", "exact_extra_unconditional", "exact_extra_given_success"):
            value = report[key]
            row[key] = value
        row["p_lb_due"] = float(report["formula_p_lb_due"])
        row["log10_p_lb_due"] = _log10_of(report["formula_p_lb_due"])
    else:
        rep = evaluate(scheme, rates)
        p = float(rates.p_pb_due)
        row["p_lb_due"] = float(rep.p_lb_due)
        row["log10_p_lb_due"] = (log_lb_due(scheme, math.log(p)) / math.log(10) if p > 0
                                 else float("-inf"))
        row["p_lb_nde"] = float(rep.p_lb_nde)
        row["a_r"] = float(rep.a_r)
    return [row], {}


def _design_spec(ns, scheme=None) -> design.DesignSpec:
    if scheme is None:
        scheme = _scheme_from(ns.scheme, 1 if ns.n is None and ns.scheme == "rep" else ns.n, ns.ec_k)
    return design.DesignSpec(
        target_lb_due=ns.target_due,
        scheme=scheme,
        rber=ns.rber,
        k=ns.k,
        geom=BlockGeometry(ns.line_bytes, ns.block_bytes),
        fixed_tier_overhead=ns.fixed_overhead,
        fixed_tier_miss=ns.miss,
        target_lb_nde=ns.target_nde,
        p_c_nde=ns.p_c_nde,
        t_max=ns.t_max,
    )


def cmd_design(ns):
    spec = _design_spec(ns)
    try:
        res = design.minimize_t(spec)
    except design.Unachievable as exc:
        raise DomainError(
            f"unachievable: binding={exc.binding} t_max={exc.t_max} "
            f"best_log10_p_lb_{exc.binding}={exc.best_log10:.6f} scheme={spec.scheme.label} "
            f"k={spec.k} rber={spec.rber!r} target_due={spec.target_lb_due!r}"
        ) from None
    witness = res.witness_log_p_lb_due
    return [{
        "scheme": spec.scheme.label,
        "k": spec.k,
        "rber": spec.rber,
        "t_star": res.t_star,
        "n": res.bch.n,
        "storage_overhead": res.storage_overhead,
        "binding": res.binding,
        "p_lb_due": float(res.report.p_lb_due),
        "log10_p_lb_due": design.log10(res.report.log_p_lb_due),
        "p_lb_nde": float(res.report.p_lb_nde),
        "a_r": float(res.report.a_r),
        "witness_log10_p_lb_due": "" if witness is None else design.log10(witness),
    }], {}


def cmd_sweep_due(ns):
    schemes = [parse_scheme_label(s) for s in ns.schemes]
    return design.sweep_due_vs_overhead(_design_spec(ns, design.CHIPKILL), ns.t_values,
                                        schemes, workers=ns.workers), {}


def cmd_sweep_replicas(ns):
    ec_k = None if ns.sweep_ec_k in (None, 0) else ns.sweep_ec_k
    return design.sweep_overhead_vs_replicas(_design_spec(ns, design.CHIPKILL), ns.n_values,
                                             ec_k=ec_k, workers=ns.workers), {}


def cmd_sweep_rber(ns):
    schemes = [parse_scheme_label(s) for s in ns.schemes]
    return design.sweep_overhead_vs_rber(_design_spec(ns, design.CHIPKILL), ns.rber_values,
                                         schemes, workers=ns.workers), {}


def cmd_calibrate_k(ns):
    best, rows = design.calibrate_k(ns.candidates, ns.reference, _design_spec(ns, design.CHIPKILL))
    for row in rows:
        row["chosen"] = row["k"] == best
    return rows, {}


def cmd_simulate(ns):
    scheme = _scheme_from(ns.scheme, ns.n, ns.k)
    rates = BlockFailureRates(ns.p, ns.p_nde)
    cfg = montecarlo.TrialConfig(scheme, rates, ns.trials, ns.seed)
    est = montecarlo.simulate(cfg, backend=ns.backend)
    formula = evaluate(scheme, rates)
    exact = (montecarlo.enumerate_exact(scheme, rates)
             if scheme.n <= montecarlo.MAX_ENUM_BLOCKS else None)

    def row(metric, e, analytical, truth):
        if analytical is None or math.isnan(e.value):
            z, ok = None, None
        elif e.sigma > 0:
            z = (e.value - float(analytical)) / e.sigma
            ok = abs(z) <= 3
        else:
            z, ok = None, e.value == float(analytical)
        return {"scheme": scheme.label, "metric": metric, "trials": ns.trials, "seed": ns.seed,
                "estimate": e.value, "ci95": e.ci95,
                "analytical": None if analytical is None else float(analytical),
                "exact": None if truth is None else float(truth),
                "z_vs_analytical": z, "within_3sigma": ok}

    return [
        row("p_lb_due", est.est_p_lb_due, formula.p_lb_due, exact and exact.p_lb_due),
        row("p_lb_nde", est.est_p_lb_nde, formula.p_lb_nde, exact and exact.p_lb_nde),
        row("extra_reads_given_success", est.est_extra_reads_given_success, formula.a_r,
            exact and exact.extra_reads_given_success),
        row("extra_reads_unconditional", est.est_extra_reads_unconditional, None,
            exact and exact.extra_reads_unconditional),
    ], {}


_SIM_FIELDS = [f for f in dataclasses.fields(racksim.SimConfig) if f.name != "scheme"]


def _sim_schemes(ns):
    if ns.scheme == "both":
        return [Replication(3), ErasureCode(4, 6)]
    return [_scheme_from(ns.scheme, ns.n, ns.k)]


def cmd_racksim(ns):
    values = {f.name: getattr(ns, f.name) for f in _SIM_FIELDS}
    schemes = _sim_schemes(ns)
    try:
        base = racksim.SimConfig(scheme=schemes[0], **values)
        configs = []
        if ns.sweep_due is not None:
            for scheme in schemes:
                for rate in [0.0] + list(ns.sweep_due):
                    configs.append(replace(base, scheme=scheme, due_rate=rate))
        else:
            configs = [replace(base, scheme=s) for s in schemes]
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    trace = ns.trace is not None
    if trace and ns.sweep_due is not None:
        raise UsageError("--trace records single runs; drop --sweep-due")

    def one(cfg):
        return racksim.run(cfg, trace=trace, backend=ns.backend)

    workers = max(1, ns.workers or 1)
    if workers > 1 and len(configs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, configs))
    else:
        reports = [one(c) for c in configs]

    rows, files = [], {}
    for cfg, rep in zip(configs, reports):
        rows.append({
            "scheme": cfg.scheme.label,
            "due_rate": cfg.due_rate,
            "qps": rep.qps,
            "lat_avg": rep.latency_avg,
            "lat_p99": rep.latency_p99,
            "mce_count": rep.mce_count,
            "extra_replica_reads": rep.extra_replica_reads,
            "issued": rep.issued,
            "completed": rep.completed,
            "failed": rep.failed,
            "in_flight": rep.in_flight,
            "block_reads": rep.block_reads,
            "block_dues": rep.block_dues,
            "node_utilization": " ".join(f"{u:.6f}" for u in rep.node_utilization),
        })
        if trace:
            path = ns.trace
            if len(configs) > 1:
                root, ext = os.path.splitext(ns.trace)
                path = f"{root}.{cfg.scheme.label}{ext or '.jsonl'}"
            files[path] = "".join(json.dumps(ev, sort_keys=True) + "\n" for ev in rep.trace)
    return rows, files


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="flat key = value defaults file")
    p.add_argument("--out", metavar="CSV", help="write CSV here (and a manifest next to it)")
    p.add_argument("--manifest", metavar="JSON", help="manifest path (default: <out>.manifest.json)")
    p.add_argument("--log10", action="store_true", help="add log10 columns for probabilities")
    p.add_argument("--precision", choices=("9", "full"), default="9",
                   help="probability digits: 9 significant, or full round-trip")


def _design_args(p: argparse.ArgumentParser, suppress: bool, sweep_n: bool = False) -> None:
    # sub-subcommands reuse these with SUPPRESS defaults so values given
    # before the sub-subcommand are not overwritten
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p.add_argument("--target-due", type=float, default=d(design.DEFAULT_TARGET),
                   help="logical-block DUE target (default 1e-33)")
    p.add_argument("--target-nde", type=optional_float, default=d(None))
    p.add_argument("--scheme", choices=("rep", "ec"), default=d("rep"))
    if not sweep_n:
        p.add_argument("--n", type=int, default=d(None), help="replicas, or EC total fragments")
    p.add_argument("--ec-k", type=int, default=d(4), help="EC data fragments")
    p.add_argument("--k", type=int, default=d(design.DEFAULT_K), help="BCH data bits per line")
    p.add_argument("--rber", type=float, default=d(design.DEFAULT_RBER))
    p.add_argument("--t-max", type=int, default=d(design.DEFAULT_T_MAX))
    p.add_argument("--p-c-nde", type=float, default=d(0.0), help="cache-line NDE probability")
    p.add_argument("--miss", type=float, default=d(FIXED_TIER_MISS),
                   help="fixed-tier miss factor")
    p.add_argument("--fixed-overhead", type=float, default=d(design.FIXED_TIER_OVERHEAD))
    p.add_argument("--line-bytes", type=int, default=d(64))
    p.add_argument("--block-bytes", type=int, default=d(4096))
    p.add_argument("--workers", type=int, default=d(_env_int("TWOTIER_WORKERS", 1)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(allow_abbrev=False,
        prog="twotier", description="Two-tier memory protection model, designer and simulators.")
    parser.add_argument("--version", action="version", version=f"twotier {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    seed = _env_int("TWOTIER_SEED", None) if os.environ.get("TWOTIER_SEED") else None

    p = sub.add_parser("model", allow_abbrev=False, help="evaluate the closed-form reliability model")
    _common(p)
    p.add_argument("--scheme", choices=("rep", "ec"), default="rep")
    p.add_argument("--n", type=int, default=None, help="replicas, or EC total fragments")
    p.add_argument("--k", type=int, default=None, help="EC data fragments (default 4)")
    p.add_argument("--p-pb-due", type=probability, default=None)
    p.add_argument("--p-pb-nde", type=probability, default=0.0)
    p.add_argument("--rber", type=float, default=None, help="derive p_pb from a BCH line code")
    p.add_argument("--t", type=int, default=None, help="BCH correction strength")
    p.add_argument("--bch-k", type=int, default=design.DEFAULT_K)
    p.add_argument("--p-c-nde", type=probability, default=0.0)
    p.add_argument("--miss", type=float, default=FIXED_TIER_MISS)
    p.add_argument("--line-bytes", type=int, default=64)
    p.add_argument("--block-bytes", type=int, default=4096)
    p.add_argument("--exact", action="store_true", help="rational evaluation plus enumeration")
    p.set_defaults(_handler=cmd_model, _parser=p)

    p = sub.add_parser("design", allow_abbrev=False, help="cheapest BCH strength meeting the targets")
    _common(p)
    _design_args(p, suppress=False)
    p.set_defaults(_handler=cmd_design, _parser=p)
    dsub = p.add_subparsers(dest="design_command", metavar="SWEEP")

    q = dsub.add_parser("sweep-due", allow_abbrev=False, help="DUE against storage overhead per t")
    _common(q)
    _design_args(q, suppress=True)
    q.add_argument("--t", dest="t_values", type=int_range, default=int_range("0..40"))
    q.add_argument("--schemes", type=scheme_list, default=["rep1", "rep3", "ec4-6"])
    q.set_defaults(_handler=cmd_sweep_due, _parser=q)

    q = dsub.add_parser("sweep-replicas", allow_abbrev=False, help="overhead against replica count")
    _common(q)
    _design_args(q, suppress=True, sweep_n=True)
    q.add_argument("--n", "--n-values", dest="n_values", type=int_range,
                   default=int_range("1..8"), help="replica counts, e.g. 1..8")
    q.add_argument("--sweep-ec-k", type=optional_int, default=4,
                   help="add RS(k, k+n-1) rows; 'none' to skip")
    q.set_defaults(_handler=cmd_sweep_replicas, _parser=q)

    q = dsub.add_parser("sweep-rber", allow_abbrev=False, help="overhead saving against RBER")
    _common(q)
    _design_args(q, suppress=True)
    q.add_argument("--rber-values", type=float_list, default=[1e-5, 1e-4, 2e-4, 1e-3])
    q.add_argument("--schemes", type=scheme_list, default=["rep3", "ec4-6"])
    q.set_defaults(_handler=cmd_sweep_rber, _parser=q)

    q = dsub.add_parser("calibrate-k", allow_abbrev=False, help="BCH data length nearest a reference overhead")
    _common(q)
    _design_args(q, suppress=True)
    q.add_argument("--candidates", type=int_range, default=[512, 1024, 2048, 4096])
    q.add_argument("--reference", type=float, default=0.27)
    q.set_defaults(_handler=cmd_calibrate_k, _parser=q)

    p = sub.add_parser("simulate", allow_abbrev=False, help="Monte Carlo estimate against the formulas")
    _common(p)
    p.add_argument("--scheme", choices=("rep", "ec"), default="rep")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--k", type=int, default=None, help="EC data fragments (default 4)")
    p.add_argument("--p", type=probability, default=0.1, help="physical-block DUE probability")
    p.add_argument("--p-nde", type=probability, default=0.0)
    p.add_argument("--trials", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=42 if seed is None else seed)
    p.add_argument("--backend", choices=("numba", "numpy"), default=None)
    p.set_defaults(_handler=cmd_simulate, _parser=p)

    p = sub.add_parser("racksim", allow_abbrev=False, help="discrete-event rack simulation")
    _common(p)
    p.add_argument("--scheme", choices=("rep", "ec", "both"), default="both")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    defaults = racksim.SimConfig()
    for f in _SIM_FIELDS:
        flag = "--" + f.name.replace("_", "-")
        value = getattr(defaults, f.name)
        if f.name == "seed" and seed is not None:
            value = seed
        if isinstance(value, bool):
            p.add_argument(flag, type=_to_bool, nargs="?", const=True, default=value)
        else:
            p.add_argument(flag, type=type(value), default=value)
    p.add_argument("--sweep-due", type=float_list, default=None,
                   help="e.g. 1e-9..1e-2; adds a 0-rate baseline row per scheme")
    p.add_argument("--trace", metavar="JSONL", help="write the event log of each run")
    p.add_argument("--backend", choices=("numba", "numpy"), default=None)
    p.add_argument("--workers", type=int, default=_env_int("TWOTIER_WORKERS", 1))
    p.set_defaults(_handler=cmd_racksim, _parser=p)

    p = sub.add_parser("replay", allow_abbrev=False, help="re-run a manifest and verify checksums")
    p.add_argument("manifest_path", metavar="MANIFEST")
    p.add_argument("--out", help="also write the regenerated CSV here")
    p.set_defaults(_handler=None, _parser=p)
    return parser


# ---------------------------------------------------------------------------
# config files and manifests


def load_config(path: str) -> dict[str, str]:
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def apply_config(ns, argv: list[str]) -> None:
    values = load_config(ns.config)
    actions = {a.dest: a for a in ns._parser._actions}
    for dest, raw in values.items():
        action = actions.get(dest)
        if action is None or dest in _INTERNAL or not action.option_strings:
            raise UsageError(f"unknown config key {dest!r}")
        explicit = any(tok == opt or tok.startswith(opt + "=")
                       for tok in argv for opt in action.option_strings)
        if explicit:
            continue
        try:
            if action.nargs == 0:  # store_true
                value = _to_bool(raw)
            elif action.type is not None:
                value = action.type(raw)
            else:
                value = raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config key {dest!r}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {dest!r}: {value!r} not in {list(action.choices)}")
        setattr(ns, dest, value)


def _params(ns) -> dict:
    return {k: v for k, v in vars(ns).items() if k not in _INTERNAL}


def write_manifest(path: str, ns, outputs: dict[str, str]) -> None:
    params = _params(ns)
    seeds = [params["seed"]] if "seed" in params else []
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "tool": "twotier",
        "version": __version__,
        "command": [ns.command] + ([ns.design_command] if getattr(ns, "design_command", None) else []),
        "params": params,
        "seeds": seeds,
        "outputs": {os.path.basename(p): sha256_text(text) for p, text in outputs.items()},
        "primary_output": os.path.basename(ns.out) if ns.out else None,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


_HANDLERS = {
    ("model",): cmd_model,
    ("design",): cmd_design,
    ("design", "sweep-due"): cmd_sweep_due,
    ("design", "sweep-replicas"): cmd_sweep_replicas,
    ("design", "sweep-rber"): cmd_sweep_rber,
    ("design", "calibrate-k"): cmd_calibrate_k,
    ("simulate",): cmd_simulate,
    ("racksim",): cmd_racksim,
}


def produce(ns) -> dict[str, str]:
    """Run a parsed command; returns output path (or "-") -> text."""
    rows, side = ns._handler(ns)
    if ns.log10:
        rows = add_log10_columns(rows)
    text = render_csv(rows, ns.precision)
    return {ns.out or "-": text, **side}


def replay(ns) -> int:
    try:
        with open(ns.manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load manifest: {exc}") from None
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise UsageError("unsupported manifest schema")
    handler = _HANDLERS.get(tuple(manifest["command"]))
    if handler is None:
        raise UsageError(f"unknown command in manifest: {manifest['command']}")
    params = dict(manifest["params"])
    primary = manifest.get("primary_output")
    base = os.path.dirname(os.path.abspath(ns.manifest_path))
    if params.get("trace"):
        # regenerate side files next to the manifest under their recorded names
        params["trace"] = os.path.join(base, os.path.basename(params["trace"]))
    run_ns = argparse.Namespace(**params, _handler=handler, out=primary, config=None, manifest=None)
    outputs = produce(run_ns)
    mismatches = []
    for path, text in outputs.items():
        name = os.path.basename(path)
        want = manifest["outputs"].get(name)
        if want is None:
            mismatches.append(f"{name}: not recorded in manifest")
        elif sha256_text(text) != want:
            mismatches.append(f"{name}: checksum differs")
    if ns.out:
        with open(ns.out, "w") as fh:
            fh.write(outputs[primary or "-"])
    for m in mismatches:
        print(f"replay: {m}", file=sys.stderr)
    if mismatches:
        return EXIT_DOMAIN
    print(f"replay: {len(outputs)} output(s) identical", file=sys.stderr)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
        try:
            ns = parser.parse_args(argv)
        except SystemExit as exc:
            return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
        if ns.command == "replay":
            return replay(ns)
        if ns.config:
            apply_config(ns, argv)
        outputs = produce(ns)
        for path, text in outputs.items():
            if path == "-":
                sys.stdout.write(text)
            else:
                with open(path, "w") as fh:
                    fh.write(text)
        if ns.out or ns.manifest:
            write_manifest(ns.manifest or f"{ns.out}.manifest.json", ns,
                           {p: t for p, t in outputs.items()})
        return EXIT_OK
    except UsageError as exc:
        print(f"twotier: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"twotier: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (ValueError, TypeError) as exc:
        print(f"twotier: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
