"""Time the numba and numpy kernel paths on the same inputs.

    python3 benchmarks/bench_kernels.py [--points 4096] [--dim 32] [--k 256] [--repeat 5]

The numba path is timed after a warm-up call so JIT compilation is excluded.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gcb import _accel


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--points", type=int, default=4096)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--k", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    pts = rng.normal(size=(args.points, args.dim))
    book = rng.normal(size=(args.k, args.dim))
    assign, _ = _accel.nearest(pts, book, backend="numpy")
    cent = _accel.cluster_sums(pts, assign, args.k, backend="numpy")[0] / np.maximum(
        np.bincount(assign, minlength=args.k), 1)[:, None]

    cases = {
        "nearest": lambda b: _accel.nearest(pts, book, backend=b),
        "cluster_sums": lambda b: _accel.cluster_sums(pts, assign, args.k, backend=b),
        "hartigan": lambda b: _accel.hartigan(pts, cent.copy(), assign.copy(), max_passes=3, backend=b),
    }
    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    print(f"N={args.points} d={args.dim} K={args.k} best of {args.repeat}")
    print(f"{'kernel':<14}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases.items():
        if "numba" in backends:
            fn("numba")  # compile
        t = {b: best_of(lambda: fn(b), args.repeat) for b in backends}
        line = f"{name:<14}" + "".join(f"{t[b] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{t['numpy'] / t['numba']:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
