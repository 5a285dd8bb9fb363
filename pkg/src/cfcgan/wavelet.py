"""Multilevel 2-D discrete wavelet transform (Daubechies-3) and the
low-band-nulled residual extraction.

Boundary handling is periodic, the only mode with exact perfect
reconstruction; the transform therefore satisfies Parseval's identity to
machine precision and a constant image puts all of its energy in the
final approximation band. These transforms run outside the gradient
tape: residual extraction is data preprocessing, not a trained layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch
from .tensor import Tensor

# Orthonormal 6-tap Daubechies-3 filter pair, analysis order. Values are
# the float64 spectral factorization of the order-3 Daubechies polynomial
# (orthonormality and vanishing-moment defects < 1e-15); they agree with
# the published rounded table to 4e-12.
DEC_LO = np.array([
    0.035226291885709526,
    -0.085441273882026660,
    -0.135011020010254580,
    0.459877502118491540,
    0.806891509311092400,
    0.332670552950082600,
])
DEC_HI = np.array([
    -0.332670552950082600,
    0.806891509311092400,
    -0.459877502118491540,
    -0.135011020010254580,
    0.085441273882026660,
    0.035226291885709526,
])
_TAPS = 6


@dataclass
class WaveletPyramid:
    """Subband decomposition: per-level (lh, hl, hh) details plus the final
    approximation band ``ll``. Level 0 is the finest scale."""

    levels: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    ll: np.ndarray
    shape: tuple[int, ...]
    mode: str = field(default="periodic")

    @property
    def depth(self) -> int:
        return len(self.levels)

    def coefficient_count(self) -> int:
        total = self.ll.size
        for lh, hl, hh in self.levels:
            total += lh.size + hl.size + hh.size
        return total

    def copy(self) -> "WaveletPyramid":
        return WaveletPyramid(
            levels=[(lh.copy(), hl.copy(), hh.copy()) for lh, hl, hh in self.levels],
            ll=self.ll.copy(), shape=self.shape, mode=self.mode)


def _as_array(image) -> np.ndarray:
    return image.data if isinstance(image, Tensor) else np.asarray(image)


def _analyze_axis(x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Periodic filter + downsample-by-2 along one axis."""
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(_TAPS)[None, :]) % n
    windows = x[..., idx]
    lo = windows @ DEC_LO.astype(x.dtype)
    hi = windows @ DEC_HI.astype(x.dtype)
    return np.moveaxis(lo, -1, axis), np.moveaxis(hi, -1, axis)


def _synthesize_axis(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of _analyze_axis (exact inverse, the analysis is orthonormal)."""
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    half = lo.shape[-1]
    n = 2 * half
    h = DEC_LO.astype(lo.dtype)
    g = DEC_HI.astype(lo.dtype)
    out = np.zeros(lo.shape[:-1] + (n,), lo.dtype)
    base = 2 * np.arange(half)
    for k in range(_TAPS):
        cols = (base + k) % n
        # stride-2 targets are distinct for fixed k, so fancy-index add is safe
        out[..., cols] += lo * h[k] + hi * g[k]
    return np.moveaxis(out, -1, axis)


def _check_divisible(h: int, w: int, levels: int) -> None:
    if levels < 1:
        raise ValueError(f"decomposition level must be >= 1, got {levels}")
    div = 1 << levels
    if h % div or w % div:
        raise ShapeMismatch(
            f"image sides {h}x{w} must be divisible by 2^{levels} = {div}")


def dwt2(image, levels: int) -> WaveletPyramid:
    """Separable multilevel analysis over the last two axes of an
    (N,C,H,W) array, recursing on the approximation band."""
    arr = _as_array(image)
    h, w = arr.shape[-2], arr.shape[-1]
    _check_divisible(h, w, levels)
    bands = []
    cur = arr
    for _ in range(levels):
        lo_w, hi_w = _analyze_axis(cur, -1)
        ll, lh = _analyze_axis(lo_w, -2)   # lh: highpass along height
        hl, hh = _analyze_axis(hi_w, -2)
        bands.append((lh, hl, hh))
        cur = ll
    return WaveletPyramid(levels=bands, ll=cur, shape=arr.shape)


def idwt2(pyr: WaveletPyramid) -> Tensor:
    """Exact inverse of dwt2 under periodic extension."""
    cur = pyr.ll
    for lvl, (lh, hl, hh) in enumerate(reversed(pyr.levels)):
        if lh.shape != cur.shape or hl.shape != cur.shape or hh.shape != cur.shape:
            raise ShapeMismatch(
                f"pyramid level {pyr.depth - 1 - lvl} subband shapes "
                f"{lh.shape}/{hl.shape}/{hh.shape} do not match approximation {cur.shape}")
        lo_w = _synthesize_axis(cur, lh, -2)
        hi_w = _synthesize_axis(hl, hh, -2)
        cur = _synthesize_axis(lo_w, hi_w, -1)
    if cur.shape != pyr.shape:
        raise ShapeMismatch(f"synthesis produced {cur.shape}, expected {pyr.shape}")
    return Tensor(cur)


def wavelet_residual(image, levels: int) -> tuple[Tensor, Tensor]:
    """Split an image into (residual, lowband) where the residual is the
    synthesis of the pyramid with the final approximation band zeroed.
    residual + lowband reproduces the input exactly."""
    arr = _as_array(image)
    pyr = dwt2(arr, levels)
    pyr.ll = np.zeros_like(pyr.ll)
    residual = idwt2(pyr)
    lowband = Tensor(arr - residual.data)
    return residual, lowband


def residual_project(x: Tensor, levels: int) -> Tensor:
    """LL-nulling as a differentiable operation: an orthogonal projection,
    so the backward pass applies the same projection to the gradient.
    Data-side residual extraction stays tape-free; this op exists for the
    one place a projection sits inside a trained graph (the generator
    output fed to the discriminator)."""
    from .tensor import _accum, _make

    def project(arr: np.ndarray) -> np.ndarray:
        pyr = dwt2(arr, levels)
        pyr.ll = np.zeros_like(pyr.ll)
        return idwt2(pyr).data

    data = project(x.data)

    def bwd(out):
        def fn(g):
            _accum(x, project(g))
        return fn

    return _make(data, (x,), bwd)
