"""Compiled vs pure-numpy kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Times ``conv3x3_replicate`` (the PPA fuse convolution) and
``window_moments`` (local normal estimation) on both backends at a few
image sizes and prints the best-of-N wall time and the speedup.
"""

import argparse
import timeit

import numpy as np

from planekit import kernels

CASES = {
    "conv3x3  C=8->4   64x48": lambda rng: ("conv3x3_replicate",
                                            (rng.normal(size=(8, 48, 64)), rng.normal(size=(4, 8, 3, 3)))),
    "conv3x3  C=16->8 160x120": lambda rng: ("conv3x3_replicate",
                                             (rng.normal(size=(16, 120, 160)), rng.normal(size=(8, 16, 3, 3)))),
    "moments  r=3      64x48": lambda rng: ("window_moments",
                                            (rng.normal(size=(48, 64, 3)), rng.uniform(size=(48, 64)) > 0.05, 3)),
    "moments  r=3    640x480": lambda rng: ("window_moments",
                                            (rng.normal(size=(480, 640, 3)), rng.uniform(size=(480, 640)) > 0.05, 3)),
}


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'case':26s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    previous = kernels.active_backend()
    try:
        for name, make in CASES.items():
            op, op_args = make(rng)
            times = {}
            for b in backends:
                kernels.use_backend(b)
                times[b] = best_time(getattr(kernels, op), op_args, args.repeat)
            row = f"{name:26s}" + "".join(f"{times[b] * 1e3:10.2f}ms" for b in backends)
            if "compiled" in times:
                row += f"  {times['python'] / times['compiled']:9.1f}x"
            print(row)
    finally:
        kernels.use_backend(previous)


if __name__ == "__main__":
    main()
