"""Timing comparison of the compiled and pure-NumPy hot kernels.

Runs the tiled-attention and LCS kernels through both backends on growing
inputs and prints a table of best-of-N wall times, the speedup, and the
max deviation between the two outputs (which should be ~1e-15 noise).

Usage: python benchmarks/bench_kernels.py [--repeats 3] [--head-dim 64]
"""

import argparse
import time

import numpy as np

from extsum._kernels import pybackend

try:
    from extsum._kernels import _core
except ImportError:
    _core = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_attention(repeats, head_dim, block_size):
    rng = np.random.default_rng(0)
    print(f"\ntiled attention (head_dim={head_dim}, block={block_size}, causal)")
    print(f"{'n':>6} {'pure (ms)':>12} {'compiled (ms)':>14} {'speedup':>8} {'max dev':>10}")
    for n in (128, 256, 512, 1024, 2048):
        q = rng.standard_normal((n, head_dim))
        k = rng.standard_normal((n, head_dim))
        v = rng.standard_normal((n, head_dim))
        t_pure, out_pure = best_of(
            lambda: pybackend.attention_tiled(q, k, v, True, block_size), repeats)
        if _core is None:
            print(f"{n:>6} {t_pure * 1e3:>12.2f} {'n/a':>14} {'n/a':>8} {'n/a':>10}")
            continue
        t_comp, out_comp = best_of(
            lambda: _core.attention_tiled(q, k, v, True, block_size), repeats)
        dev = float(np.abs(out_pure - out_comp).max())
        print(f"{n:>6} {t_pure * 1e3:>12.2f} {t_comp * 1e3:>14.2f} "
              f"{t_pure / t_comp:>7.1f}x {dev:>10.1e}")


def bench_lcs(repeats):
    rng = np.random.default_rng(1)
    print("\nLCS length (int32 token ids, vocab 500)")
    print(f"{'len':>6} {'pure (ms)':>12} {'compiled (ms)':>14} {'speedup':>8} {'match':>6}")
    for n in (100, 300, 1000, 3000):
        a = rng.integers(0, 500, size=n).astype(np.int32)
        b = rng.integers(0, 500, size=n).astype(np.int32)
        t_pure, out_pure = best_of(lambda: pybackend.lcs_length_ids(a, b), repeats)
        if _core is None:
            print(f"{n:>6} {t_pure * 1e3:>12.2f} {'n/a':>14} {'n/a':>8} {'n/a':>6}")
            continue
        t_comp, out_comp = best_of(lambda: _core.lcs_length_ids(a, b), repeats)
        print(f"{n:>6} {t_pure * 1e3:>12.2f} {t_comp * 1e3:>14.2f} "
              f"{t_pure / t_comp:>7.1f}x {str(out_pure == out_comp):>6}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3, help="best-of-N timing (default 3)")
    ap.add_argument("--head-dim", type=int, default=64, help="attention head width (default 64)")
    ap.add_argument("--block-size", type=int, default=64, help="attention tile rows (default 64)")
    args = ap.parse_args()
    if _core is None:
        print("compiled extension not importable; timing the pure backend only")
    bench_attention(args.repeats, args.head_dim, args.block_size)
    bench_lcs(args.repeats)


if __name__ == "__main__":
    main()
