"""Pure-numpy implementations of the hot numeric kernels.

These are the fallback path used when numba is unavailable or when
``CFCG_KERNELS=numpy`` is set. Convolutions go through an im2col strided
view plus einsum so BLAS does the heavy lifting; ray kernels are
vectorized per projection angle.
"""

import numpy as np

HAS_NUMBA = False


def _col_view(xp: np.ndarray, kh: int, kw: int, stride: int,
              ho: int, wo: int) -> np.ndarray:
    """(N,C,Hp,Wp) padded input -> read-only (N,C,ho,wo,kh,kw) window view."""
    n, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    shape = (n, c, ho, wo, kh, kw)
    strides = (s0, s1, s2 * stride, s3 * stride, s2, s3)
    return np.lib.stride_tricks.as_strided(xp, shape, strides, writeable=False)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        y = np.tensordot(x, w[:, :, 0, 0], axes=([1], [1]))  # (N,H,W,O)
        return np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), x.dtype)
        xp[:, :, pad:pad + h, pad:pad + wd] = x
    else:
        xp = x
    cols = _col_view(xp, kh, kw, stride, ho, wo)
    # tensordot routes the contraction through BLAS
    y = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # (N,HO,WO,O)
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_grad_input(gy: np.ndarray, w: np.ndarray, stride: int, pad: int,
                      h: int, wd: int) -> np.ndarray:
    n, o, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        gx = np.tensordot(gy, w[:, :, 0, 0], axes=([1], [0]))  # (N,H,W,C)
        return np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
    contrib = np.tensordot(w, gy, axes=([0], [1]))  # (C,KH,KW,N,HO,WO)
    gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), gy.dtype)
    # scatter each kernel tap back over its strided window
    for ky in range(kh):
        for kx in range(kw):
            gxp[:, :, ky:ky + ho * stride:stride, kx:kx + wo * stride:stride] += \
                contrib[:, ky, kx].transpose(1, 0, 2, 3)
    if pad:
        return gxp[:, :, pad:pad + h, pad:pad + wd]
    return gxp


def conv2d_grad_weight(x: np.ndarray, gy: np.ndarray, stride: int, pad: int,
                       kh: int, kw: int) -> np.ndarray:
    n, c, h, wd = x.shape
    _, _, ho, wo = gy.shape
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        return np.tensordot(gy, x, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), x.dtype)
        xp[:, :, pad:pad + h, pad:pad + wd] = x
    else:
        xp = x
    cols = _col_view(xp, kh, kw, stride, ho, wo)
    return np.tensordot(gy, cols, axes=([0, 2, 3], [0, 2, 3]))


def radon(image: np.ndarray, angles: np.ndarray, n_det: int, step: float) -> np.ndarray:
    """Parallel-beam line integrals by bilinear ray sampling.

    Detector coordinate t spans the grid diagonal centered on the image;
    samples are taken every ``step`` pixels along each ray and summed
    times the step length.
    """
    grid = image.shape[0]
    center = (grid - 1) / 2.0
    half_diag = 0.5 * np.sqrt(2.0) * grid
    n_s = int(np.ceil(2.0 * half_diag / step)) + 1
    s = -half_diag + step * np.arange(n_s)
    t = np.arange(n_det) - (n_det - 1) / 2.0
    sino = np.zeros((len(angles), n_det), image.dtype)
    for ia, theta in enumerate(angles):
        ct, st = np.cos(theta), np.sin(theta)
        # px/py: (n_det, n_s) sample coordinates for every ray at this angle
        px = center + t[:, None] * ct - s[None, :] * st
        py = center + t[:, None] * st + s[None, :] * ct
        x0 = np.floor(px)
        y0 = np.floor(py)
        fx = px - x0
        fy = py - y0
        acc = np.zeros(px.shape, image.dtype)
        for dy in (0, 1):
            for dx in (0, 1):
                xi = x0.astype(np.int64) + dx
                yi = y0.astype(np.int64) + dy
                ok = (xi >= 0) & (xi < grid) & (yi >= 0) & (yi < grid)
                wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
                vals = np.zeros(px.shape, image.dtype)
                vals[ok] = image[yi[ok], xi[ok]]
                acc += wgt * vals
        sino[ia] = acc.sum(axis=1) * step
    return sino


def backproject(filtered: np.ndarray, angles: np.ndarray, grid: int) -> np.ndarray:
    """Linear-interpolation backprojection scaled by pi / n_angles."""
    n_det = filtered.shape[1]
    center = (grid - 1) / 2.0
    det_center = (n_det - 1) / 2.0
    yy, xx = np.mgrid[0:grid, 0:grid]
    xr = xx - center
    yr = yy - center
    out = np.zeros((grid, grid), filtered.dtype)
    for ia, theta in enumerate(angles):
        t = xr * np.cos(theta) + yr * np.sin(theta) + det_center
        i0 = np.floor(t).astype(np.int64)
        frac = t - i0
        v0 = np.where((i0 >= 0) & (i0 < n_det), filtered[ia][np.clip(i0, 0, n_det - 1)], 0.0)
        i1 = i0 + 1
        v1 = np.where((i1 >= 0) & (i1 < n_det), filtered[ia][np.clip(i1, 0, n_det - 1)], 0.0)
        out += v0 * (1.0 - frac) + v1 * frac
    return out * (np.pi / len(angles))
