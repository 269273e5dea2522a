#!/usr/bin/env python3
"""Benchmark the compiled batch kernel against the numpy fallback.

Times the aggregate-loss sweep (the SMC hot path: M parameter vectors
through a T-day recursion) on a grid of problem sizes and prints the
throughput of both backends plus the speedup. Run from the repo root:

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from varsmc._kernels import _ref

try:
    from varsmc._kernels import _core
except ImportError:
    _core = None


def make_problem(m, t, seed=0):
    rng = np.random.default_rng(seed)
    theta = np.column_stack([rng.normal(0, 1, (m, 4)), rng.normal(0, 0.1, (m, 9))])
    rv_d = rng.uniform(0.1, 4.0, t)
    rv_w = rng.uniform(0.1, 4.0, t)
    rv_m = rng.uniform(0.1, 4.0, t)
    y = rng.normal(0, 1, t)
    h0 = np.zeros((m, 3))
    return theta, rv_d, rv_w, rv_m, y, h0


def time_backend(mod, args, t, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        mod.batch_loss(*args[:5], 1, t, 0.025, args[5])
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    opts = parser.parse_args()

    sizes = [(200, 500), (500, 1000), (2000, 2000), (2000, 3000)]
    print(f"{'M':>6} {'T':>6} {'python (ms)':>12} {'c (ms)':>10} {'speedup':>8} {'c ns/step':>10}")
    for m, t in sizes:
        args = make_problem(m, t)
        py = time_backend(_ref, args, t, opts.repeat)
        if _core is not None:
            cc = time_backend(_core, args, t, opts.repeat)
            loss_c, _ = _core.batch_loss(*args[:5], 1, t, 0.025, args[5])
            loss_p, _ = _ref.batch_loss(*args[:5], 1, t, 0.025, args[5])
            assert np.allclose(loss_c, loss_p, rtol=1e-10)
            steps = m * (t - 1)
            print(
                f"{m:>6} {t:>6} {py * 1e3:>12.2f} {cc * 1e3:>10.2f} "
                f"{py / cc:>8.1f} {cc / steps * 1e9:>10.1f}"
            )
        else:
            print(f"{m:>6} {t:>6} {py * 1e3:>12.2f} {'n/a':>10} {'n/a':>8} {'n/a':>10}")
    if _core is None:
        print("compiled extension not available; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
