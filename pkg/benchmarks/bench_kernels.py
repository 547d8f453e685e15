"""Time the numpy and numba kernel sets on model-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from dozerformer import _kernels


def cases(rng):
    scores = rng.normal(size=(64 * 4, 8, 8))
    mask = rng.random((8, 8)) < 0.5
    mask[np.arange(8), np.arange(8)] = True
    y = _kernels.NUMPY_KERNELS.masked_softmax(scores, mask)
    dy = rng.normal(size=y.shape)
    series = rng.normal(size=(2000, 21))
    return {
        "masked_softmax (256x8x8)": lambda k: k.masked_softmax(scores, mask),
        "masked_softmax_backward": lambda k: k.masked_softmax_backward(y, dy),
        "moving_average (2000x21, k=25)": lambda k: k.moving_average(series, 25),
        "local_self (n=64)": lambda k: k.local_self(64, 1),
        "stride_self (n=64)": lambda k: k.stride_self(64, 2),
        "vary_cross (5x64)": lambda k: k.vary_cross(5, 64, 1, 2),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    sets = [_kernels.NUMPY_KERNELS] + ([_kernels.NUMBA_KERNELS] if _kernels.NUMBA_KERNELS else [])
    rng = np.random.default_rng(0)
    for ks in sets:
        for fn in cases(rng).values():
            fn(ks)  # warm up jit
    print(f"{'kernel':34s}" + "".join(f"{ks.name:>12s}" for ks in sets) + "   (microseconds per call)")
    for label, fn in cases(rng).items():
        times = [min(timeit.repeat(lambda: fn(ks), number=10, repeat=args.repeat)) / 10 * 1e6 for ks in sets]
        print(f"{label:34s}" + "".join(f"{t:12.1f}" for t in times))


if __name__ == "__main__":
    main()
