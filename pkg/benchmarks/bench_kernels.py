"""Time the numba and numpy kernel paths on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from subitize.kernels import numba_kernels, numpy_kernels


def _cases(rng):
    xpad = rng.random((32, 66, 66, 16), dtype=np.float32)
    cols = numpy_kernels.im2col(xpad, 64, 64)
    fm = rng.random((32, 64, 64, 16), dtype=np.float32)
    pooled, idx = numpy_kernels.maxpool2_forward(fm)
    img = rng.random((256, 256, 4), dtype=np.float32)
    mat = np.array([[0.9, 0.1, 5.0], [-0.1, 0.9, 3.0]])
    return {
        "im2col": lambda k: k.im2col(xpad, 64, 64),
        "col2im": lambda k: k.col2im(cols, 32, 64, 64, 16),
        "maxpool_fwd": lambda k: k.maxpool2_forward(fm),
        "maxpool_bwd": lambda k: k.maxpool2_backward(pooled, idx),
        "affine_sample": lambda k: k.affine_sample(img, mat, 256, 256, False),
    }


def _best(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<15}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call in _cases(rng).items():
        t_np = _best(lambda: call(numpy_kernels), args.repeat)
        if numba_kernels is None:
            print(f"{name:<15}{t_np * 1e3:>10.2f}{'n/a':>10}{'':>9}")
            continue
        t_nb = _best(lambda: call(numba_kernels), args.repeat)
        print(f"{name:<15}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
