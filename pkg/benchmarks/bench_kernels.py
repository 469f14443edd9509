#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run: python3 benchmarks/bench_kernels.py [--frames N] [--size HxW]
Both paths must produce bit-identical outputs; this script asserts that
before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from codectok import kernels
from codectok.streams import VideoConfig
from codectok.synth import synth_video


def time_fn(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=8)
    parser.add_argument("--size", default="64x64")
    parser.add_argument("--radius", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    height, width = (int(v) for v in args.size.split("x"))
    cfg = VideoConfig(width=width, height=height, channels=1, block_size=16,
                      gop_size=args.frames, fps=30, fusion_window=1)
    frames = synth_video("moving_rect", 42, cfg, args.frames)

    if not kernels.NUMBA_ACTIVE:
        print("numba path inactive (CODECTOK_NUMBA=0 or numba missing); "
              "timing numpy only")

    pairs = list(zip(frames[:-1], frames[1:]))

    def search_numpy():
        return [kernels.sad_search_numpy(t, r, 16, args.radius) for r, t in pairs]

    fields_np = search_numpy()

    def warp_all_numpy():
        return [kernels.warp_numpy(r, m, 16) for (r, _), m in zip(pairs, fields_np)]

    rows = []
    t_search_np = time_fn(search_numpy, args.repeats)
    t_warp_np = time_fn(warp_all_numpy, args.repeats)
    rows.append(("sad_search", "numpy", t_search_np))
    rows.append(("warp", "numpy", t_warp_np))

    if kernels.NUMBA_ACTIVE:
        def search_njit():
            return [kernels.sad_search_njit(t, r, 16, args.radius) for r, t in pairs]

        def warp_all_njit():
            return [kernels.warp_njit(r, m, 16) for (r, _), m in zip(pairs, fields_np)]

        fields_nb = search_njit()  # also triggers JIT compile before timing
        warp_all_njit()
        for a, b in zip(fields_np, fields_nb):
            assert np.array_equal(a, b), "numba and numpy SAD search disagree"
        for a, b in zip(warp_all_numpy(), warp_all_njit()):
            assert np.array_equal(a, b), "numba and numpy warp disagree"
        rows.append(("sad_search", "numba", time_fn(search_njit, args.repeats)))
        rows.append(("warp", "numba", time_fn(warp_all_njit, args.repeats)))

    n_pairs = len(pairs)
    print(f"{height}x{width}, {n_pairs} frame pairs, radius {args.radius} "
          f"(best of {args.repeats})")
    print(f"{'kernel':<12} {'path':<7} {'total s':>10} {'ms/frame':>10}")
    for name, path, total in rows:
        print(f"{name:<12} {path:<7} {total:>10.4f} {1000 * total / n_pairs:>10.3f}")
    by_key = {(n, p): t for n, p, t in rows}
    if kernels.NUMBA_ACTIVE:
        for name in ("sad_search", "warp"):
            speedup = by_key[(name, "numpy")] / by_key[(name, "numba")]
            print(f"{name}: numba speedup {speedup:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
