"""Compare the numba and numpy embedding-gradient scatter kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from uegr import _kernels as K

CASES = [
    # (vocab rows, batch, seq, dim)
    (200, 16, 16, 16),
    (2000, 16, 64, 32),
    (20000, 32, 128, 64),
]


def bench(fn, args, repeat):
    fn(*args)  # warm-up / compile
    return min(timeit.repeat(lambda: fn(*args), number=5, repeat=repeat)) / 5


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"backend: {K.BACKEND}")
    print(f"{'kernel':<20}{'shape':>22}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}  equal")
    for rows, b, t, d in CASES:
        ids = rng.integers(0, rows, size=(b, t))
        grad = rng.normal(size=(b, t, d))
        pairs = [
            ("scatter_rows", K.scatter_rows_numpy, K.scatter_rows),
            ("per_example", K.scatter_rows_per_example_numpy, K.scatter_rows_per_example),
        ]
        for name, ref, fast in pairs:
            if name == "per_example" and rows * b * d > 5e7:
                continue
            a = bench(ref, (rows, ids, grad), args.repeat)
            f = bench(fast, (rows, ids, grad), args.repeat)
            same = np.array_equal(ref(rows, ids, grad), fast(rows, ids, grad))
            shape = f"{rows}x{b}x{t}x{d}"
            print(f"{name:<20}{shape:>22}{a * 1e3:>12.3f}{f * 1e3:>12.3f}{a / f:>10.1f}  {same}")


if __name__ == "__main__":
    main()
