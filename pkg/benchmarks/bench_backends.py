"""Time the numba kernels against the pure-numpy fallbacks.

    python benchmarks/bench_backends.py [--trials N] [--duration S] [--repeat R]

Both backends produce identical results; the script asserts that before
reporting. The numba column excludes compilation (one warm-up call).
"""

from __future__ import annotations

import argparse
import time
from dataclasses import replace

from twotier import _accel
from twotier.model import BlockFailureRates, ErasureCode, Replication
from twotier.montecarlo import TrialConfig, simulate
from twotier.racksim import SimConfig, run


def best_of(repeat, func):
    best, result = float("inf"), None
    for _ in range(repeat):
        start = time.perf_counter()
        result = func()
        best = min(best, time.perf_counter() - start)
    return best, result


def bench(label, work, call, repeat):
    call("numba")  # compile or load from cache
    t_nb, r_nb = best_of(repeat, lambda: call("numba"))
    t_np, r_np = best_of(repeat, lambda: call("numpy"))
    assert r_nb == r_np, f"{label}: backends disagree"
    print(f"{label:<28} {work:>12} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.1f}x")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=2_000_000)
    parser.add_argument("--duration", type=float, default=0.01, help="simulated seconds")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        parser.error("numba is not importable; nothing to compare")

    print(f"{'workload':<28} {'size':>12} {'numba s':>10} {'numpy s':>10} {'speedup':>9}")
    rates = BlockFailureRates(0.01, 1e-4)
    for scheme in (Replication(3), ErasureCode(4, 6)):
        cfg = TrialConfig(scheme, rates, trials=args.trials, seed=1)
        bench(f"montecarlo {scheme.label}", f"{args.trials} tr",
              lambda b, cfg=cfg: simulate(cfg, backend=b), args.repeat)
    base = SimConfig(duration=args.duration, due_rate=1e-3)
    for scheme in (Replication(3), ErasureCode(4, 6)):
        cfg = replace(base, scheme=scheme)
        bench(f"racksim {scheme.label}", f"{args.duration:g} s",
              lambda b, cfg=cfg: run(cfg, backend=b), args.repeat)


if __name__ == "__main__":
    main()
