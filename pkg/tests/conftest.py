import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def central_diff(fn, arr: np.ndarray, idx, eps: float = 1e-6) -> float:
    """Central finite difference of scalar fn() w.r.t. arr[idx], mutating
    arr in place and restoring it."""
    arr[idx] += eps
    hi = fn()
    arr[idx] -= 2 * eps
    lo = fn()
    arr[idx] += eps
    return (hi - lo) / (2 * eps)


def naive_conv2d(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Direct six-loop cross-correlation; the independent convolution oracle."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    y = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * stride + ky - pad
                                ix = ox * stride + kx - pad
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += x[ni, ci, iy, ix] * w[oi, ci, ky, kx]
                    y[ni, oi, oy, ox] = acc
    return y
