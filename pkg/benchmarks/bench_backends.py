#!/usr/bin/env python3
"""Time the numba kernels against their pure-numpy fallbacks.

The per-kernel comparison runs both implementations in one process (both
stay importable regardless of SINKDRO_BACKEND). The end-to-end solve at the
bottom uses whichever backend the package bound at import time; run the
script twice to compare:

    python3 benchmarks/bench_backends.py
    SINKDRO_BACKEND=numpy python3 benchmarks/bench_backends.py

First numba call per signature compiles (cached on disk after that); the
warmup pass keeps compile time out of the numbers.
"""

import argparse
import time

import numpy as np

from sinkdro import _kernels
from sinkdro.apps import NewsvendorLoss, exp_demand_sample
from sinkdro.core import QUADRATIC, CostSpec, EmpiricalDistribution, SeedSpec
from sinkdro.dual import SamplePool
from sinkdro.optimizer import sinkhorn_solve


def best_of(fn, args, repeats):
    fn(*args)  # warmup: JIT compile / cache touch
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7,
                    help="timed repetitions per case (best is reported)")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cases = []

    for n, m in ((20, 20_000), (100, 5_000)):
        F = np.ascontiguousarray(rng.normal(0.0, 2.0, (n, m)))
        cases.append((f"tilted_rows {n}x{m}",
                      _kernels.tilted_rows_numpy,
                      _kernels.tilted_rows_numba, (F, 0.7)))
        cases.append((f"pooled_logmeanexp {n}x{m}",
                      _kernels.pooled_logmeanexp_numpy,
                      _kernels.pooled_logmeanexp_numba, (F, 0.7)))

    for L in (200, 1000):
        C = rng.random((L, L))
        np.fill_diagonal(C, 0.0)
        logkern = np.ascontiguousarray(-C / 0.1)
        logp = np.log(np.full(L, 1.0 / L))
        cases.append((f"sinkhorn_logscale {L}x{L}",
                      _kernels.sinkhorn_logscale_numpy,
                      _kernels.sinkhorn_logscale_numba,
                      (logkern, logp, logp, 1e-9, 2000)))

    v = np.ascontiguousarray(rng.normal(size=100_000))
    cases.append(("simplex_project d=1e5",
                  _kernels.simplex_project_numpy,
                  _kernels.simplex_project_numba, (v,)))

    have_numba = _kernels.HAVE_NUMBA
    if not have_numba:
        print("numba not importable: timing the numpy fallback only\n")

    print(f"{'kernel':<28} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, f_np, f_nb, call in cases:
        t_np = best_of(f_np, call, args.repeats)
        if have_numba:
            t_nb = best_of(f_nb, call, args.repeats)
            print(f"{name:<28} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
                  f"{t_np / t_nb:>7.1f}x")
        else:
            print(f"{name:<28} {t_np * 1e3:>8.2f}ms {'-':>10} {'-':>8}")

    data = EmpiricalDistribution(exp_demand_sample(1.0, 20, SeedSpec(1)))
    pool = SamplePool.build(data, CostSpec(QUADRATIC, 0.2), 5_000, SeedSpec(2))
    loss = NewsvendorLoss(6.0)
    theta0 = np.array([0.5])
    sinkhorn_solve(pool, 0.01, loss, theta0)  # warmup
    t0 = time.perf_counter()
    res = sinkhorn_solve(pool, 0.01, loss, theta0)
    dt = time.perf_counter() - t0
    print(f"\nsinkhorn_solve n=20 m=5000 [{_kernels.BACKEND} backend]: "
          f"{dt * 1e3:.0f}ms (V = {res.value:.4f})")


if __name__ == "__main__":
    main()
