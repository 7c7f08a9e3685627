"""Compare the compiled kernel lane against the pure-numpy fallback.

Runs each hot kernel on a few realistic workloads and prints per-call
times for both lanes plus the speedup. The matrix-vector products of the
solver are BLAS calls in both lanes, so they are not benchmarked here.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--seed S]
"""

import argparse
import time

import numpy as np

from scenefuse import _kernels_py

try:
    from scenefuse import _kernels
except ImportError:
    _kernels = None


def best_per_call(fn, args, repeats: int, batch: int) -> float:
    """Best-of-`repeats` mean seconds per call over `batch` calls."""
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(batch):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / batch)
    return best


def workloads(rng):
    p5_maps = np.ascontiguousarray(rng.random((512, 49)))
    p3_maps = np.ascontiguousarray(rng.random((256, 784)))
    vec_512 = rng.random(512)
    vec_1536 = rng.random(1536)
    margins_small = rng.standard_normal(1_000) * 4.0
    margins_large = rng.standard_normal(100_000) * 4.0
    return [
        ("gap_pool", "512x49 maps", (p5_maps,), 400),
        ("gap_pool", "256x784 maps", (p3_maps,), 100),
        ("threshold_scale", "512-d vector", (vec_512,), 400),
        ("threshold_scale", "1536-d vector", (vec_1536,), 400),
        ("logistic_terms", "1k margins", (margins_small,), 200),
        ("logistic_terms", "100k margins", (margins_large,), 20),
    ]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="timing repetitions; the best one is reported")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    if _kernels is None:
        print("compiled lane not built; timing the python lane only\n")

    header = f"{'kernel':<17}{'workload':<15}{'python':>12}{'compiled':>12}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, load, call_args, batch in workloads(rng):
        py = best_per_call(
            getattr(_kernels_py, name), call_args, args.repeats, batch
        )
        if _kernels is None:
            print(f"{name:<17}{load:<15}{py * 1e6:>10.1f}us{'-':>12}{'-':>9}")
            continue
        cy = best_per_call(
            getattr(_kernels, name), call_args, args.repeats, batch
        )
        print(
            f"{name:<17}{load:<15}{py * 1e6:>10.1f}us{cy * 1e6:>10.1f}us"
            f"{py / cy:>8.1f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
