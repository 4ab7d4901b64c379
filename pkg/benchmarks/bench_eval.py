"""Benchmark the numba and numpy expression-evaluation backends.

The hot loop in every verification run is batch evaluation of compiled
expression programs over sample-point arrays.  Typical batches are small
(hundreds to a few thousand points: one sample plan, one fiber profile),
and they are issued thousands of times, so per-call overhead matters as
much as throughput.  This script times both backends across batch sizes
and prints mean time per call plus the numba speedup.

Run:

    python benchmarks/bench_eval.py
    python benchmarks/bench_eval.py --sizes 200 1000 5000 100000

Setting ENGELCALC_NO_NUMBA=1 changes what the library uses by default,
but this script always times both paths when numba is importable.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from engelcalc import _kernels
from engelcalc import expr as ex

WORKLOADS = {
    "twist_component": "cos(5*theta/2)*sin(z) + sin(5*theta/2)*z^2",
    "bracket_coefficient": "2.5*(cos(5*theta/2)*z - sin(5*theta/2))*cos(theta)",
    "rational_mix": "(x^3 - 2*x*y + exp(z/4))/(2 + y^2) + cos(pi*x)",
}

VARS = ("x", "y", "z", "theta")


def time_backend(e, points, backend, repeats):
    calls = max(1, 200_000 // points.shape[0])
    ex.evaluate_many(e, VARS, points, backend=backend)  # warm-up / JIT
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(calls):
            ex.evaluate_many(e, VARS, points, backend=backend)
        samples.append((time.perf_counter() - start) / calls)
    return statistics.mean(samples)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--sizes", type=int, nargs="+", default=[200, 1000, 5000, 100_000]
    )
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    have_numba = _kernels.HAVE_NUMBA
    if not have_numba:
        print("numba is not importable; timing the numpy path only\n")
    print(f"repeats={args.repeats}  default backend: {_kernels.active_backend()}\n")

    header = f"{'workload':<22}{'points':>9}{'numpy':>12}"
    if have_numba:
        header += f"{'numba':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for name, text in WORKLOADS.items():
        e = ex.parse_scalar_expr(text, VARS)
        for n in args.sizes:
            points = rng.uniform(-1.0, 1.0, (n, len(VARS)))
            t_numpy = time_backend(e, points, "numpy", args.repeats)
            row = f"{name:<22}{n:>9}{t_numpy * 1e6:>10.1f}us"
            if have_numba:
                t_numba = time_backend(e, points, "numba", args.repeats)
                row += f"{t_numba * 1e6:>10.1f}us{t_numpy / t_numba:>9.2f}x"
            print(row)
        print()


if __name__ == "__main__":
    main()
