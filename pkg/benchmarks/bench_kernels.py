"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run:  python benchmarks/bench_kernels.py [--repeat N]

The table explains the default ``auto`` backend policy: BLAS-backed numpy
convolutions plus numba ray kernels. Force a uniform path with
CFCG_KERNELS=numba or CFCG_KERNELS=numpy.
"""

import argparse
import time

import numpy as np

from cfcgan import kernels_numpy

try:
    from cfcgan import kernels_numba
except ImportError:
    kernels_numba = None

CONV_CASES = [
    ("disc layer1 64x64 s2", (1, 1, 64, 64), (64, 1, 4, 4), 2, 1),
    ("disc layer2 32x32 s2", (1, 64, 32, 32), (128, 64, 4, 4), 2, 1),
    ("disc layer3 16x16 s1", (1, 128, 16, 16), (256, 128, 4, 4), 1, 1),
    ("coupling 3x3 3->32", (1, 3, 32, 32), (32, 3, 3, 3), 1, 1),
    ("coupling 1x1 32->32", (1, 32, 32, 32), (32, 32, 1, 1), 1, 0),
    ("coupling 3x3 32->1", (1, 32, 32, 32), (1, 32, 3, 3), 1, 1),
]


def timeit(fn, repeat):
    fn()  # warmup / jit
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat * 1e3


def bench_conv(repeat):
    rng = np.random.default_rng(0)
    print(f"{'convolution case':28s} {'numpy ms':>9s} {'numba ms':>9s} {'speedup':>8s}")
    for name, xs, ws, stride, pad in CONV_CASES:
        x = rng.standard_normal(xs)
        w = rng.standard_normal(ws)
        t_np = timeit(lambda: kernels_numpy.conv2d_forward(x, w, stride, pad), repeat)
        if kernels_numba is None:
            print(f"{name:28s} {t_np:9.3f} {'-':>9s} {'-':>8s}")
            continue
        y = kernels_numpy.conv2d_forward(x, w, stride, pad)
        yn = kernels_numba.conv2d_forward(x, w, stride, pad)
        assert np.abs(y - yn).max() < 1e-9
        t_nb = timeit(lambda: kernels_numba.conv2d_forward(x, w, stride, pad), repeat)
        print(f"{name:28s} {t_np:9.3f} {t_nb:9.3f} {t_np / t_nb:7.2f}x")


def bench_rays(repeat):
    rng = np.random.default_rng(1)
    grid = 128
    img = rng.standard_normal((grid, grid))
    angles = np.linspace(0, np.pi, 180, endpoint=False)
    n_det = int(np.ceil(np.sqrt(2) * grid))
    filt = rng.standard_normal((180, n_det))
    cases = [
        ("radon 128x128, 180 angles",
         lambda k: k.radon(img, angles, n_det, 0.5)),
        ("backproject 128x128",
         lambda k: k.backproject(filt, angles, grid)),
    ]
    print(f"\n{'ray kernel case':28s} {'numpy ms':>9s} {'numba ms':>9s} {'speedup':>8s}")
    for name, call in cases:
        t_np = timeit(lambda: call(kernels_numpy), repeat)
        if kernels_numba is None:
            print(f"{name:28s} {t_np:9.3f} {'-':>9s} {'-':>8s}")
            continue
        a = call(kernels_numpy)
        b = call(kernels_numba)
        assert np.abs(a - b).max() < 1e-9
        t_nb = timeit(lambda: call(kernels_numba), repeat)
        print(f"{name:28s} {t_np:9.3f} {t_nb:9.3f} {t_np / t_nb:7.2f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    bench_conv(args.repeat)
    bench_rays(args.repeat)
