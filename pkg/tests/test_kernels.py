"""Cross-path equivalence of the numba and numpy kernel implementations."""

import numpy as np
import pytest

from cfcgan import backend, kernels_numpy

kernels_numba = pytest.importorskip("cfcgan.kernels_numba")


CONV_CASES = [
    ((1, 1, 8, 8), (3, 1, 3, 3), 1, 1),
    ((2, 3, 9, 7), (4, 3, 4, 4), 2, 1),
    ((1, 4, 6, 6), (2, 4, 1, 1), 1, 0),
    ((1, 2, 10, 10), (3, 2, 5, 5), 2, 2),
    ((2, 1, 7, 5), (1, 1, 2, 2), 3, 0),
]


@pytest.mark.parametrize("xs,ws,stride,pad", CONV_CASES)
def test_conv_forward_paths_agree(rng, xs, ws, stride, pad):
    x = rng.standard_normal(xs)
    w = rng.standard_normal(ws)
    a = kernels_numpy.conv2d_forward(x, w, stride, pad)
    b = kernels_numba.conv2d_forward(x, w, stride, pad)
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("xs,ws,stride,pad", CONV_CASES)
def test_conv_gradient_paths_agree(rng, xs, ws, stride, pad):
    x = rng.standard_normal(xs)
    w = rng.standard_normal(ws)
    gy = rng.standard_normal(kernels_numpy.conv2d_forward(x, w, stride, pad).shape)
    gi_a = kernels_numpy.conv2d_grad_input(gy, w, stride, pad, xs[2], xs[3])
    gi_b = kernels_numba.conv2d_grad_input(gy, w, stride, pad, xs[2], xs[3])
    np.testing.assert_allclose(gi_a, gi_b, atol=1e-12)
    gw_a = kernels_numpy.conv2d_grad_weight(x, gy, stride, pad, ws[2], ws[3])
    gw_b = kernels_numba.conv2d_grad_weight(x, gy, stride, pad, ws[2], ws[3])
    np.testing.assert_allclose(gw_a, gw_b, atol=1e-12)


def test_conv_float32_paths(rng):
    x = rng.standard_normal((1, 2, 8, 8)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    a = kernels_numpy.conv2d_forward(x, w, 1, 1)
    b = kernels_numba.conv2d_forward(x, w, 1, 1)
    assert a.dtype == b.dtype == np.float32
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_radon_paths_agree(rng):
    img = rng.standard_normal((48, 48))
    angles = np.linspace(0, np.pi, 30, endpoint=False)
    a = kernels_numpy.radon(img, angles, 68, 0.5)
    b = kernels_numba.radon(img, angles, 68, 0.5)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_backproject_paths_agree(rng):
    angles = np.linspace(0, np.pi, 30, endpoint=False)
    filt = rng.standard_normal((30, 68))
    a = kernels_numpy.backproject(filt, angles, 48)
    b = kernels_numba.backproject(filt, angles, 48)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_backend_selection_is_coherent():
    assert backend.KERNEL_PATH in ("auto", "numba", "numpy")
    if backend.KERNEL_PATH == "auto":
        # fast mix: BLAS convolutions, jitted ray kernels
        assert backend.conv2d_forward is kernels_numpy.conv2d_forward
        assert backend.radon is kernels_numba.radon


def test_determinism_across_repeated_calls(rng):
    x = rng.standard_normal((1, 3, 16, 16))
    w = rng.standard_normal((8, 3, 4, 4))
    first = kernels_numba.conv2d_forward(x, w, 2, 1)
    for _ in range(3):
        again = kernels_numba.conv2d_forward(x, w, 2, 1)
        np.testing.assert_array_equal(first, again)
