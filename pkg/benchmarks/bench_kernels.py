#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the hot forward/backward kernels at training-like shapes under both
backends and prints the speedup.  Run after installing the package:

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from ctxfill import kernels
from ctxfill.backend import HAS_NUMBA, set_backend
from ctxfill.rng import RngState


def _timeit(fn, repeat):
    fn()  # warm-up (numba compilation, caches)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_cases(rng):
    x = rng.uniform((16, 64, 16, 16), -1.0, 1.0)
    w = rng.uniform((128, 64, 4, 4), -0.1, 0.1)
    b = rng.uniform((128,), -0.1, 0.1)
    dy = rng.uniform((16, 128, 8, 8), -1.0, 1.0)

    xt = rng.uniform((16, 128, 8, 8), -1.0, 1.0)
    wt = rng.uniform((128, 64, 4, 4), -0.1, 0.1)
    bt = rng.uniform((64,), -0.1, 0.1)
    dyt = rng.uniform((16, 64, 16, 16), -1.0, 1.0)

    xc = rng.uniform((16, 256, 16), -1.0, 1.0)
    wc = rng.uniform((256, 16, 16), -0.1, 0.1)
    bc = rng.uniform((256, 16), -0.1, 0.1)

    xp = rng.uniform((16, 64, 32, 32), -1.0, 1.0)

    return [
        ("conv2d_forward", lambda: kernels.conv2d_forward(x, w, b, 2, 2, 1, 1)),
        ("conv2d_backward", lambda: kernels.conv2d_backward(x, w, dy, 2, 2, 1, 1)),
        ("tconv2d_forward", lambda: kernels.tconv2d_forward(xt, wt, bt, 2, 2, 1, 1)),
        ("tconv2d_backward", lambda: kernels.tconv2d_backward(xt, wt, dyt, 2, 2, 1, 1)),
        ("cwfc_forward", lambda: kernels.cwfc_forward(xc, wc, bc)),
        ("maxpool_forward", lambda: kernels.maxpool_forward(xp, 2, 2, 2, 2)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    if not HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    cases = build_cases(RngState(0))
    print(f"{'kernel':<20} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
    for name, fn in cases:
        set_backend("numpy")
        t_np = _timeit(fn, args.repeat)
        set_backend("numba")
        t_nb = _timeit(fn, args.repeat)
        set_backend(None)
        print(f"{name:<20} {t_np * 1e3:>12.3f} {t_nb * 1e3:>12.3f} {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
