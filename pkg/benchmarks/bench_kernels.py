"""Time the compiled kernels against the NumPy fallback.

Runs each hot op (convolution forward/backward, 2x2 max pooling, region
pooling) on the layer shapes the default detector actually produces for a
96x96 input, and prints per-call times for both backends side by side.
Shapes scale with --image-size if you want to probe larger inputs.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 30] [--image-size 96]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fracdet.nanonet.kernels import numpy_kernels

try:
    from fracdet.nanonet.kernels import _ckernels
except ImportError:
    _ckernels = None


def best_ms(fn, repeats: int) -> float:
    """Best-of-N wall time in milliseconds (best filters scheduler noise)."""
    fn()  # warm caches before timing
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def build_cases(side: int):
    """(name, args-per-op) for the default arch's layers at the given input side.

    conv_channels (12, 24, 32, 32), conv_strides (2, 1, 1, 1), pooling after
    layers 0 and 1, so the map shrinks 96 -> 48 -> 24 -> 12 for side 96.
    """
    rng = np.random.Generator(np.random.PCG64(0))
    s2, s4, s8 = side // 2, side // 4, side // 8

    def conv_case(cin, h, w, cout, stride):
        x = rng.normal(0, 1, (cin, h, w))
        wt = rng.normal(0, 0.1, (cout, cin, 3, 3))
        b = np.zeros(cout)
        ho = (h + 2 - 3) // stride + 1
        g = rng.normal(0, 1, (cout, ho, (w + 2 - 3) // stride + 1))
        return x, wt, b, g, stride

    convs = [
        ("conv 1x%dx%d -> 12, stride 2" % (side, side), conv_case(1, side, side, 12, 2)),
        ("conv 12x%dx%d -> 24" % (s2, s2), conv_case(12, s2, s2, 24, 1)),
        ("conv 24x%dx%d -> 32" % (s4, s4), conv_case(24, s4, s4, 32, 1)),
        ("conv 32x%dx%d -> 32" % (s8, s8), conv_case(32, s8, s8, 32, 1)),
    ]
    pools = [
        ("pool 12x%dx%d" % (s2, s2), rng.normal(0, 1, (12, s2, s2))),
        ("pool 24x%dx%d" % (s4, s4), rng.normal(0, 1, (24, s4, s4))),
    ]
    feat = rng.normal(0, 1, (32, s8, s8))
    edges = np.linspace(0, s8, 5).astype(np.int64)
    roi = ("roi  32x%dx%d -> 4x4" % (s8, s8),
           (feat, edges[:-1], edges[1:], edges[:-1], edges[1:]))
    return convs, pools, roi


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=30,
                    help="timed calls per op (best is reported)")
    ap.add_argument("--image-size", type=int, default=96,
                    help="input side; must be divisible by 8")
    args = ap.parse_args(argv)
    if args.image_size % 8 or args.image_size < 16:
        ap.error("--image-size must be a multiple of 8, at least 16")

    backends = [("numpy", numpy_kernels)]
    if _ckernels is not None:
        backends.append(("cython", _ckernels))
    else:
        print("compiled extension not built; timing the NumPy backend only")

    convs, pools, roi = build_cases(args.image_size)
    rows = []
    for name, (x, wt, b, g, stride) in convs:
        rows.append((name + " fwd", {
            bn: best_ms(lambda m=mod: m.conv2d_forward(x, wt, b, stride, 1),
                        args.repeats) for bn, mod in backends}))
        rows.append((name + " bwd", {
            bn: best_ms(lambda m=mod: m.conv2d_backward(x, wt, g, stride, 1),
                        args.repeats) for bn, mod in backends}))
    for name, x in pools:
        rows.append((name, {
            bn: best_ms(lambda m=mod: m.maxpool2x2_forward(x), args.repeats)
            for bn, mod in backends}))
    rname, rargs = roi
    rows.append((rname, {
        bn: best_ms(lambda m=mod: m.roi_pool_forward(*rargs), args.repeats)
        for bn, mod in backends}))

    width = max(len(r[0]) for r in rows)
    header = f"{'op':<{width}}  {'numpy ms':>9}"
    if _ckernels is not None:
        header += f"  {'cython ms':>9}  {'speedup':>7}"
    print(header)
    print("-" * len(header))
    for name, times in rows:
        line = f"{name:<{width}}  {times['numpy']:>9.3f}"
        if _ckernels is not None:
            ratio = times["numpy"] / times["cython"] if times["cython"] else float("inf")
            line += f"  {times['cython']:>9.3f}  {ratio:>6.2f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
