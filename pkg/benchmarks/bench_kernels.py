#!/usr/bin/env python3
"""Benchmark the numba hot kernels against the pure-numpy fallback.

The runtime backend is picked by MARF_ACCEL (numba|numpy); this script
imports both implementations directly and times them on identical inputs.

    python benchmarks/bench_kernels.py --points 100000 --repeats 5
"""

import argparse
import time

import numpy as np

from marf.accel import _numba, _numpy
from marf.hashgrid import HashGrid, HashGridConfig


def time_call(fn, args, repeats):
    fn(*args)  # warm-up / JIT compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=100_000)
    parser.add_argument("--levels", type=int, default=8)
    parser.add_argument("--table-size", type=int, default=2 ** 16)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    config = HashGridConfig(levels=args.levels, table_size=args.table_size)
    grid = HashGrid(config, rng=np.random.default_rng(0))
    rng = np.random.default_rng(1)
    pts = rng.random((args.points, 3)).astype(np.float32)
    upstream = rng.standard_normal(
        (args.points, config.feature_dim)).astype(np.float32)

    common = (grid.offsets, grid.resolutions, grid.dense, config.table_size)
    out_nb = np.empty((args.points, config.feature_dim), dtype=np.float32)
    out_np = np.empty_like(out_nb)

    rows = []
    t_nb = time_call(_numba.hashgrid_encode, (pts, grid.tables, *common, out_nb),
                     args.repeats)
    t_np = time_call(_numpy.hashgrid_encode, (pts, grid.tables, *common, out_np),
                     args.repeats)
    assert np.allclose(out_nb, out_np, atol=1e-5), "backends disagree on encode"
    rows.append(("encode", t_np, t_nb))

    def run_backward(impl):
        sums = np.zeros_like(grid.tables)
        counts = np.zeros(grid.tables.shape[0], dtype=np.int64)
        impl.hashgrid_encode_backward(pts, upstream, *common, sums, counts)
        return sums, counts

    sums_nb, counts_nb = run_backward(_numba)
    sums_np, counts_np = run_backward(_numpy)
    assert np.array_equal(counts_nb, counts_np), "backends disagree on counts"
    assert np.allclose(sums_nb, sums_np, atol=1e-3), "backends disagree on sums"

    def time_backward(impl):
        run_backward(impl)  # warm-up / JIT compile
        best = float("inf")
        for _ in range(args.repeats):
            sums = np.zeros_like(grid.tables)
            counts = np.zeros(grid.tables.shape[0], dtype=np.int64)
            t0 = time.perf_counter()
            impl.hashgrid_encode_backward(pts, upstream, *common, sums, counts)
            best = min(best, time.perf_counter() - t0)
        return best

    rows.append(("encode_backward", time_backward(_numpy), time_backward(_numba)))

    print(f"{args.points} points, {args.levels} levels, "
          f"table 2^{int(np.log2(args.table_size))}, best of {args.repeats}")
    print(f"{'kernel':<18} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    for name, t_np, t_nb in rows:
        print(f"{name:<18} {t_np * 1e3:>8.1f}ms {t_nb * 1e3:>8.1f}ms "
              f"{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
