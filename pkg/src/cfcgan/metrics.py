"""PSNR and SSIM for paired image evaluation.

Both metrics are pure functions. PSNR uses a fixed dynamic-range
constant (2.0 in normalized units, i.e. the 2000 HU display window
after the /4000 normalization) so scores are comparable across images;
identical images return the infinity sentinel. SSIM uses 11x11
Gaussian-weighted local statistics (sigma 1.5) averaged over all valid
window positions; ``global_stats=True`` computes the single-window
whole-image variant instead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .tensor import Tensor

MAX_NORMALIZED = 2.0
MAX_HU = 2000.0

_K1 = 0.01
_K2 = 0.03
_WIN = 11
_SIGMA = 1.5


def _as_image(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    arr = np.squeeze(arr)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a single 2-D image, got shape {arr.shape}")
    return arr.astype(np.float64)


def psnr(x, y, max_val: float = MAX_NORMALIZED) -> float:
    """20*log10(max_val / rmse); math.inf for identical images."""
    xi, yi = _as_image(x), _as_image(y)
    if xi.shape != yi.shape:
        raise ShapeMismatch(f"psnr: shapes {xi.shape} vs {yi.shape}")
    mse = float(np.mean((xi - yi) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(max_val / math.sqrt(mse))


def _gaussian_window(n: int = _WIN, sigma: float = _SIGMA) -> np.ndarray:
    t = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with a 1-D window along both axes."""
    rows = np.lib.stride_tricks.sliding_window_view(img, len(g), axis=1) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, len(g), axis=0) @ g


def ssim(x, y, max_val: float = MAX_NORMALIZED, global_stats: bool = False) -> float:
    xi, yi = _as_image(x), _as_image(y)
    if xi.shape != yi.shape:
        raise ShapeMismatch(f"ssim: shapes {xi.shape} vs {yi.shape}")
    c1 = (_K1 * max_val) ** 2
    c2 = (_K2 * max_val) ** 2
    if global_stats:
        mx, my = xi.mean(), yi.mean()
        vx, vy = xi.var(), yi.var()
        cov = float(np.mean((xi - mx) * (yi - my)))
        return float(((2 * mx * my + c1) * (2 * cov + c2))
                     / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    if min(xi.shape) < _WIN:
        raise ShapeMismatch(f"ssim: image {xi.shape} smaller than {_WIN}x{_WIN} window")
    g = _gaussian_window()
    mx = _filter_valid(xi, g)
    my = _filter_valid(yi, g)
    vx = _filter_valid(xi * xi, g) - mx * mx
    vy = _filter_valid(yi * yi, g) - my * my
    cov = _filter_valid(xi * yi, g) - mx * my
    smap = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(smap.mean())


@dataclass
class MetricReport:
    psnr_values: list[float]
    ssim_values: list[float]

    @property
    def count(self) -> int:
        return len(self.psnr_values)

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def psnr_std(self) -> float:
        return float(np.std(self.psnr_values))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim_values))

    @property
    def ssim_std(self) -> float:
        return float(np.std(self.ssim_values))


def evaluate_pairs(images, references, max_val: float = MAX_NORMALIZED) -> MetricReport:
    if len(images) != len(references):
        raise ShapeMismatch(f"evaluate_pairs: {len(images)} images vs "
                            f"{len(references)} references")
    return MetricReport(
        psnr_values=[psnr(a, b, max_val) for a, b in zip(images, references)],
        ssim_values=[ssim(a, b, max_val) for a, b in zip(images, references)])


def write_report_csv(path, ids: list[str], report: MetricReport) -> None:
    """CSV rows image_id,psnr_db,ssim plus a summary row of means."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image_id", "psnr_db", "ssim"])
        for i, name in enumerate(ids):
            w.writerow([name, f"{report.psnr_values[i]:.6f}", f"{report.ssim_values[i]:.6f}"])
        w.writerow(["mean", f"{report.psnr_mean:.6f}", f"{report.ssim_mean:.6f}"])
