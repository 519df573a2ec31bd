#!/usr/bin/env python3
"""Benchmark the compiled convolution kernels against the numpy fallback.

Runs each kernel on shapes representative of the model's CNN encoder and
Conformer conv modules and prints per-backend timings plus the speedup.

Usage: python3 benchmarks/bench_kernels.py [--dtype float32] [--repeats 5]
"""

import argparse
import time

import numpy as np

from ssld._kernels import numpy_ref

try:
    from ssld._kernels import _ckern
except ImportError:
    _ckern = None

CONV_SHAPES = [
    # (B, C_in, H, W, C_out)  -- CNN encoder blocks, toy and full-size widths
    (4, 4, 800, 64, 16),
    (4, 16, 800, 64, 16),
    (4, 32, 400, 32, 32),
    (4, 64, 200, 16, 64),
    (1, 64, 800, 64, 64),
]

DW_SHAPES = [
    # (B, T, C, K)  -- Conformer depthwise convs
    (4, 50, 64, 15),
    (4, 50, 512, 51),
    (32, 50, 64, 15),
]


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(args):
    rng = np.random.default_rng(0)
    dt = np.dtype(args.dtype)
    backends = [("numpy", numpy_ref)]
    if _ckern is not None:
        backends.append(("cython", _ckern))
    else:
        print("compiled extension not available; benchmarking numpy only")

    print(f"dtype={args.dtype}  repeats={args.repeats} (best-of)")
    header = f"{'kernel':34s}" + "".join(f"{name:>12s}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)

    def row(label, times):
        line = f"{label:34s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:9.2f}x"
        print(line)

    for b, c_in, h, w, c_out in CONV_SHAPES:
        x = rng.normal(size=(b, c_in, h, w)).astype(dt)
        wt = rng.normal(size=(c_out, c_in, 3, 3)).astype(dt)
        gy = rng.normal(size=(b, c_out, h, w)).astype(dt)
        row(f"conv2d fwd  {b}x{c_in}x{h}x{w}->{c_out}",
            [_time(lambda m=m: m.conv2d_forward(x, wt), args.repeats)
             for _, m in backends])
        row(f"conv2d bwd  {b}x{c_in}x{h}x{w}->{c_out}",
            [_time(lambda m=m: (m.conv2d_backward_input(gy, wt),
                                m.conv2d_backward_weight(x, gy, 3, 3)),
                   args.repeats)
             for _, m in backends])

    for b, t, c, k in DW_SHAPES:
        x = rng.normal(size=(b, t, c)).astype(dt)
        wt = rng.normal(size=(c, k)).astype(dt)
        gy = rng.normal(size=(b, t, c)).astype(dt)
        row(f"dwconv1d fwd {b}x{t}x{c} k{k}",
            [_time(lambda m=m: m.dwconv1d_forward(x, wt), args.repeats)
             for _, m in backends])
        row(f"dwconv1d bwd {b}x{t}x{c} k{k}",
            [_time(lambda m=m: (m.dwconv1d_backward_input(gy, wt),
                                m.dwconv1d_backward_weight(x, gy, k)),
                   args.repeats)
             for _, m in backends])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    ap.add_argument("--repeats", type=int, default=5)
    bench(ap.parse_args())


if __name__ == "__main__":
    main()
