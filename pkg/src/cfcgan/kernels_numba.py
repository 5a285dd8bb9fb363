"""Numba-jitted hot kernels: convolution forward/backward, ray tracing.

All loops accumulate in a fixed order so results are bit-identical
regardless of thread count (prange only spans independent output
slices). fastmath stays off for the same reason.

1x1 convolutions reduce to per-pixel channel matmuls and are routed
through BLAS; general kernels pad once and run branch-free inner loops.
"""

import numpy as np
from numba import njit, prange

HAS_NUMBA = True


@njit(cache=True, fastmath=False)
def _conv1x1_fw(x, w):
    n, c, h, wd = x.shape
    o = w.shape[0]
    w2 = np.ascontiguousarray(w.reshape(o, c))
    y = np.empty((n, o, h, wd), x.dtype)
    for ni in range(n):
        x2 = np.ascontiguousarray(x[ni]).reshape(c, h * wd)
        y[ni] = np.dot(w2, x2).reshape(o, h, wd)
    return y


@njit(cache=True, parallel=True, fastmath=False)
def conv2d_forward(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        return _conv1x1_fw(x, w)
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), x.dtype)
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    y = np.zeros((n, o, ho, wo), x.dtype)
    for no in prange(n * o):
        ni = no // o
        oi = no % o
        acc = np.zeros((ho, wo), x.dtype)
        for ci in range(c):
            for ky in range(kh):
                for kx in range(kw):
                    wv = w[oi, ci, ky, kx]
                    if stride == 1:
                        for oy in range(ho):
                            for ox in range(wo):
                                acc[oy, ox] += wv * xp[ni, ci, oy + ky, ox + kx]
                    else:
                        for oy in range(ho):
                            iy = oy * stride + ky
                            for ox in range(wo):
                                acc[oy, ox] += wv * xp[ni, ci, iy, ox * stride + kx]
        y[ni, oi] = acc
    return y


@njit(cache=True, fastmath=False)
def _conv1x1_gi(gy, w):
    n, o, h, wd = gy.shape
    c = w.shape[1]
    wt = np.ascontiguousarray(w.reshape(o, c).T)
    gx = np.empty((n, c, h, wd), gy.dtype)
    for ni in range(n):
        g2 = np.ascontiguousarray(gy[ni]).reshape(o, h * wd)
        gx[ni] = np.dot(wt, g2).reshape(c, h, wd)
    return gx


@njit(cache=True, parallel=True, fastmath=False)
def conv2d_grad_input(gy, w, stride, pad, h, wd):
    n, o, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        return _conv1x1_gi(gy, w)
    gx = np.zeros((n, c, h, wd), gy.dtype)
    hp, wp = h + 2 * pad, wd + 2 * pad
    for nc in prange(n * c):
        ni = nc // c
        ci = nc % c
        accp = np.zeros((hp, wp), gy.dtype)
        for oi in range(o):
            for ky in range(kh):
                for kx in range(kw):
                    wv = w[oi, ci, ky, kx]
                    if stride == 1:
                        for oy in range(ho):
                            for ox in range(wo):
                                accp[oy + ky, ox + kx] += wv * gy[ni, oi, oy, ox]
                    else:
                        for oy in range(ho):
                            iy = oy * stride + ky
                            for ox in range(wo):
                                accp[iy, ox * stride + kx] += wv * gy[ni, oi, oy, ox]
        gx[ni, ci] = accp[pad:pad + h, pad:pad + wd]
    return gx


@njit(cache=True, fastmath=False)
def _conv1x1_gw(x, gy):
    n, c, h, wd = x.shape
    o = gy.shape[1]
    gw = np.zeros((o, c, 1, 1), x.dtype)
    for ni in range(n):
        g2 = np.ascontiguousarray(gy[ni]).reshape(o, h * wd)
        x2t = np.ascontiguousarray(np.ascontiguousarray(x[ni]).reshape(c, h * wd).T)
        gw += np.dot(g2, x2t).reshape(o, c, 1, 1)
    return gw


@njit(cache=True, parallel=True, fastmath=False)
def conv2d_grad_weight(x, gy, stride, pad, kh, kw):
    n, c, h, wd = x.shape
    _, o, ho, wo = gy.shape
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        return _conv1x1_gw(x, gy)
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), x.dtype)
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    gw = np.zeros((o, c, kh, kw), x.dtype)
    for oc in prange(o * c):
        oi = oc // c
        ci = oc % c
        for ky in range(kh):
            for kx in range(kw):
                acc = 0.0
                for ni in range(n):
                    if stride == 1:
                        for oy in range(ho):
                            for ox in range(wo):
                                acc += xp[ni, ci, oy + ky, ox + kx] * gy[ni, oi, oy, ox]
                    else:
                        for oy in range(ho):
                            iy = oy * stride + ky
                            for ox in range(wo):
                                acc += xp[ni, ci, iy, ox * stride + kx] * gy[ni, oi, oy, ox]
                gw[oi, ci, ky, kx] = acc
    return gw


@njit(cache=True, parallel=True, fastmath=False)
def radon(image, angles, n_det, step):
    grid = image.shape[0]
    center = (grid - 1) / 2.0
    half_diag = 0.5 * np.sqrt(2.0) * grid
    n_s = int(np.ceil(2.0 * half_diag / step)) + 1
    sino = np.zeros((len(angles), n_det), image.dtype)
    for ia in prange(len(angles)):
        ct = np.cos(angles[ia])
        st = np.sin(angles[ia])
        for di in range(n_det):
            t = di - (n_det - 1) / 2.0
            acc = 0.0
            for si in range(n_s):
                s = -half_diag + step * si
                px = center + t * ct - s * st
                py = center + t * st + s * ct
                x0 = int(np.floor(px))
                y0 = int(np.floor(py))
                fx = px - x0
                fy = py - y0
                v = 0.0
                if 0 <= x0 < grid and 0 <= y0 < grid:
                    v += (1.0 - fx) * (1.0 - fy) * image[y0, x0]
                if 0 <= x0 + 1 < grid and 0 <= y0 < grid:
                    v += fx * (1.0 - fy) * image[y0, x0 + 1]
                if 0 <= x0 < grid and 0 <= y0 + 1 < grid:
                    v += (1.0 - fx) * fy * image[y0 + 1, x0]
                if 0 <= x0 + 1 < grid and 0 <= y0 + 1 < grid:
                    v += fx * fy * image[y0 + 1, x0 + 1]
                acc += v
            sino[ia, di] = acc * step
    return sino


@njit(cache=True, parallel=True, fastmath=False)
def backproject(filtered, angles, grid):
    n_a, n_det = filtered.shape
    center = (grid - 1) / 2.0
    det_center = (n_det - 1) / 2.0
    cts = np.cos(angles)
    sts = np.sin(angles)
    out = np.zeros((grid, grid), filtered.dtype)
    for yy in prange(grid):
        yr = yy - center
        for xx in range(grid):
            xr = xx - center
            acc = 0.0
            for ia in range(n_a):
                t = xr * cts[ia] + yr * sts[ia] + det_center
                i0 = int(np.floor(t))
                frac = t - i0
                if 0 <= i0 < n_det:
                    acc += filtered[ia, i0] * (1.0 - frac)
                if 0 <= i0 + 1 < n_det:
                    acc += filtered[ia, i0 + 1] * frac
            out[yy, xx] = acc * (np.pi / n_a)
    return out
