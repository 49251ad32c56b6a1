"""Compiled vs numpy-fallback timings for the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 480x640]

Also checks that both backends return identical arrays on the benchmark inputs.
"""

import argparse
import timeit

import numpy as np

from depthsync import kernels
from depthsync.filters import FilterParams, bilateral, rolling_guidance


def cases(h, w, rng):
    yy, xx = np.mgrid[:h, :w]
    depth = 1.5 + 0.002 * xx + 0.5 * (xx > w // 2) + rng.normal(0, 0.01, (h, w))
    depth[rng.random((h, w)) < 0.05] = 0
    valid = depth > 0
    n = h * w
    u = rng.integers(-5, w + 5, n)
    v = rng.integers(-5, h + 5, n)
    z = np.round(rng.uniform(0.5, 5, n), 3)
    return {
        "splat_nearest": lambda: kernels.splat_nearest(u, v, z, h, w),
        "joint_bilateral r=3": lambda: kernels.joint_bilateral(depth, valid, depth, valid, 1.0, 0.03, 3),
        "joint_bilateral r=6": lambda: kernels.joint_bilateral(depth, valid, depth, valid, 2.0, 0.03, 6),
        "bilateral filter": lambda: bilateral(depth, FilterParams(2.0, 0.03)),
        "rolling guidance x4": lambda: rolling_guidance(depth, FilterParams(2.0, 0.03, iterations=4)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", default="480x640")
    args = ap.parse_args()
    h, w = map(int, args.size.split("x"))
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the fallback is available")
    bench = cases(h, w, np.random.default_rng(0))
    print(f"image {h}x{w}, best of {args.repeat}")
    print(f"{'kernel':<22}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    previous = kernels.get_backend()
    try:
        for name, fn in bench.items():
            times, outputs = [], []
            for b in backends:
                kernels.set_backend(b)
                outputs.append(fn())
                times.append(min(timeit.repeat(fn, number=1, repeat=args.repeat)))
            line = f"{name:<22}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times)
            if len(backends) > 1:
                a, c = outputs
                same = all(np.array_equal(x, y) for x, y in zip(a, c)) if isinstance(a, tuple) else \
                    np.allclose(a, c, rtol=0, atol=1e-12)
                line += f"{times[backends.index('python')] / times[backends.index('cython')]:>11.1f}x"
                line += "" if same else "  (outputs differ!)"
            print(line)
    finally:
        kernels.set_backend(previous)


if __name__ == "__main__":
    main()
