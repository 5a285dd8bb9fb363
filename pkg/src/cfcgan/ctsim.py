"""Synthetic CT data: random ellipse phantoms, parallel-beam projection,
Poisson dose-reduction noise, and filtered backprojection.

Every stage is driven by an explicit seed; there is no global RNG.
Attenuation images are projected, photon counts are sampled at
I0 * alpha * exp(-p) (clamped at one count so the log stays finite), and
the noisy line integrals are reconstructed with a Ram-Lak filter.
Pixel values follow the HU convention: truncate below -1000, divide by
4000, so air maps to -0.25.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import DatasetError
from .tensor import save_tensor

HU_FLOOR = -1000.0
HU_SCALE = 4000.0
MU_WATER = 0.02  # attenuation per pixel at 0 HU; sets the noise scale


@dataclass
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    angle: float
    value_hu: float


@dataclass
class Phantom:
    ellipses: list[Ellipse]
    grid: int


@dataclass
class SinogramSet:
    angles: np.ndarray
    n_det: int
    p: np.ndarray  # line integrals, shape (n_angles, n_det)
    i0: float
    alpha: float


def make_phantom(seed: int, grid: int,
                 n_ellipses: tuple[int, int] = (4, 9)) -> tuple[Phantom, np.ndarray]:
    """Deterministic random phantom plus its rasterized HU image.

    One body ellipse of soft tissue on a -1000 HU background, then a
    random count of internal structures spanning lung-like to bone-like
    attenuation, painted in order.
    """
    rng = np.random.default_rng(seed)
    ellipses = [Ellipse(
        cx=grid / 2 + rng.uniform(-0.02, 0.02) * grid,
        cy=grid / 2 + rng.uniform(-0.02, 0.02) * grid,
        a=rng.uniform(0.32, 0.42) * grid,
        b=rng.uniform(0.28, 0.40) * grid,
        angle=rng.uniform(0.0, np.pi),
        value_hu=rng.uniform(-20.0, 60.0),
    )]
    n_inner = int(rng.integers(n_ellipses[0], n_ellipses[1] + 1))
    for _ in range(n_inner):
        kind = rng.integers(0, 3)
        if kind == 0:
            value = rng.uniform(-900.0, -300.0)   # air / lung
        elif kind == 1:
            value = rng.uniform(-80.0, 200.0)     # soft tissue contrast
        else:
            value = rng.uniform(300.0, 1500.0)    # bone-like
        radius = rng.uniform(0.25, 0.8)
        phi = rng.uniform(0.0, 2 * np.pi)
        ellipses.append(Ellipse(
            cx=grid / 2 + radius * 0.3 * grid * np.cos(phi),
            cy=grid / 2 + radius * 0.3 * grid * np.sin(phi),
            a=rng.uniform(0.03, 0.16) * grid,
            b=rng.uniform(0.03, 0.16) * grid,
            angle=rng.uniform(0.0, np.pi),
            value_hu=float(value),
        ))
    phantom = Phantom(ellipses=ellipses, grid=grid)
    return phantom, rasterize(phantom)


def rasterize(phantom: Phantom) -> np.ndarray:
    """Pixel-center inclusion test; later ellipses overwrite earlier ones."""
    grid = phantom.grid
    yy, xx = np.mgrid[0:grid, 0:grid].astype(np.float64)
    img = np.full((grid, grid), HU_FLOOR)
    for e in phantom.ellipses:
        ct, st = np.cos(e.angle), np.sin(e.angle)
        dx = xx - e.cx
        dy = yy - e.cy
        u = (dx * ct + dy * st) / e.a
        v = (-dx * st + dy * ct) / e.b
        img[u * u + v * v <= 1.0] = e.value_hu
    return img


def normalize_hu(img_hu: np.ndarray) -> np.ndarray:
    """Truncate below -1000 HU, divide by 4000 (so air is -0.25)."""
    return np.maximum(img_hu, HU_FLOOR) / HU_SCALE


def hu_to_mu(img_hu: np.ndarray) -> np.ndarray:
    """Per-pixel attenuation: water-scaled, non-negative."""
    return MU_WATER * (np.maximum(img_hu, HU_FLOOR) - HU_FLOOR) / 1000.0


def mu_to_hu(img_mu: np.ndarray) -> np.ndarray:
    return img_mu * 1000.0 / MU_WATER + HU_FLOOR


def default_n_det(grid: int) -> int:
    return int(np.ceil(np.sqrt(2.0) * grid))


def radon(image: np.ndarray, n_angles: int, n_det: int | None = None,
          i0: float = 1e5, alpha: float = 1.0) -> SinogramSet:
    """Line integrals over uniformly spaced angles in [0, pi), sampled
    every 0.5 pixel along each ray with bilinear interpolation."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise DatasetError(f"radon expects a square image, got {image.shape}")
    if n_det is None:
        n_det = default_n_det(image.shape[0])
    angles = np.linspace(0.0, np.pi, n_angles, endpoint=False)
    p = backend.radon(np.ascontiguousarray(image), angles, n_det, 0.5)
    return SinogramSet(angles=angles, n_det=n_det, p=p, i0=i0, alpha=alpha)


def dose_noise(sino: SinogramSet, i0: float, alpha: float, seed: int) -> SinogramSet:
    """Poisson photon statistics at dose fraction alpha: counts are drawn
    at I0*alpha*exp(-p), clamped at one count, and converted back to line
    integrals."""
    if i0 <= 0:
        raise DatasetError(f"source intensity must be positive, got {i0}")
    if not 0.0 < alpha <= 1.0:
        raise DatasetError(f"dose fraction must be in (0, 1], got {alpha}")
    rng = np.random.default_rng(seed)
    expected = i0 * alpha * np.exp(-sino.p)
    counts = np.maximum(rng.poisson(expected).astype(np.float64), 1.0)
    p_hat = -np.log(counts / (i0 * alpha))
    return SinogramSet(angles=sino.angles.copy(), n_det=sino.n_det, p=p_hat,
                       i0=i0, alpha=alpha)


def _ramp_filter_rows(p: np.ndarray) -> np.ndarray:
    """Frequency-domain Ram-Lak filtering of each projection row on a
    zero-padded grid."""
    n_det = p.shape[1]
    size = 1
    while size < 2 * n_det:
        size *= 2
    freqs = np.fft.rfftfreq(size)  # cycles per sample
    spectrum = np.fft.rfft(p, n=size, axis=1) * np.abs(freqs)[None, :]
    return np.fft.irfft(spectrum, n=size, axis=1)[:, :n_det]


def fbp(sino: SinogramSet, grid: int) -> np.ndarray:
    """Ram-Lak filtered backprojection onto a grid x grid image."""
    filtered = np.ascontiguousarray(_ramp_filter_rows(sino.p))
    return backend.backproject(filtered, sino.angles, grid)


def reconstruct_normalized(sino: SinogramSet, grid: int) -> np.ndarray:
    """FBP then conversion to normalized HU units."""
    return normalize_hu(mu_to_hu(fbp(sino, grid)))


def write_pgm(path, img_normalized: np.ndarray,
              window_hu: tuple[float, float] = (-1000.0, 1000.0)) -> None:
    """16-bit grayscale PGM preview; the window mapping is recorded in the
    header comment line."""
    img = np.squeeze(np.asarray(img_normalized))
    hu = img * HU_SCALE
    lo, hi = window_hu
    scaled = np.clip((hu - lo) / (hi - lo), 0.0, 1.0)
    pix = (scaled * 65535.0 + 0.5).astype(">u2")
    h, w = pix.shape
    with open(path, "wb") as f:
        f.write(f"P5\n# window {lo:g} {hi:g} HU -> [0, 65535]\n{w} {h}\n65535\n".encode())
        f.write(pix.tobytes())


@dataclass
class DataConfig:
    grid: int = 64
    n_train_ld: int = 200
    n_train_sd: int = 200
    n_eval: int = 50
    alpha: float = 0.25
    alpha_sd: float = 1.0
    i0: float = 1e5
    n_angles: int = 180
    seed: int = 1000
    levels: int = 2  # wavelet depth downstream; grid must divide by 2**levels
    ld_seed_start: int | None = None
    sd_seed_start: int | None = None
    eval_seed_start: int | None = None

    def seed_ranges(self) -> dict[str, range]:
        ld0 = self.seed if self.ld_seed_start is None else self.ld_seed_start
        sd0 = ld0 + self.n_train_ld if self.sd_seed_start is None else self.sd_seed_start
        ev0 = sd0 + self.n_train_sd if self.eval_seed_start is None else self.eval_seed_start
        return {
            "ld": range(ld0, ld0 + self.n_train_ld),
            "sd": range(sd0, sd0 + self.n_train_sd),
            "eval": range(ev0, ev0 + self.n_eval),
        }


def _check_disjoint(ranges: dict[str, range]) -> None:
    names = list(ranges)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            ra, rb = ranges[a], ranges[b]
            if ra.start < rb.stop and rb.start < ra.stop:
                raise DatasetError(
                    f"phantom seed ranges overlap: {a}=[{ra.start},{ra.stop}) vs "
                    f"{b}=[{rb.start},{rb.stop}); unpaired pools must be disjoint")


def _render(seed: int, cfg: DataConfig, alpha: float,
            noise: bool) -> np.ndarray:
    _, img_hu = make_phantom(seed, cfg.grid)
    sino = radon(hu_to_mu(img_hu), cfg.n_angles, i0=cfg.i0, alpha=alpha)
    if noise:
        # noise seed offset keeps photon draws independent of phantom draws
        sino = dose_noise(sino, cfg.i0, alpha, seed=seed * 31 + 7)
    return reconstruct_normalized(sino, cfg.grid)


def build_dataset(cfg: DataConfig, out_dir) -> dict:
    """Write unpaired train pools plus a paired eval split and return the
    manifest (also stored as manifest.json).

    Train pools come from disjoint phantom seed ranges, so low-dose and
    standard-dose images never share geometry. Eval pairs share a phantom:
    a noiseless reconstruction and a dose-alpha reconstruction.
    """
    if cfg.grid % (1 << cfg.levels):
        raise DatasetError(f"grid {cfg.grid} not divisible by 2^{cfg.levels}")
    ranges = cfg.seed_ranges()
    _check_disjoint(ranges)

    out_dir = os.fspath(out_dir)
    for sub in ("train/ld", "train/sd", "eval/pairs"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    manifest: dict = {
        "grid": cfg.grid, "alpha": cfg.alpha, "alpha_sd": cfg.alpha_sd,
        "i0": cfg.i0, "n_angles": cfg.n_angles, "levels": cfg.levels,
        "seed_ranges": {k: [r.start, r.stop] for k, r in ranges.items()},
        "train_ld": [], "train_sd": [], "eval_pairs": [],
    }

    for i, seed in enumerate(ranges["ld"]):
        img = _render(seed, cfg, cfg.alpha, noise=True)
        rel = f"train/ld/ld_{i:04d}.ntsr"
        save_tensor(os.path.join(out_dir, rel), img[None, None])
        manifest["train_ld"].append({"file": rel, "seed": seed})

    for i, seed in enumerate(ranges["sd"]):
        img = _render(seed, cfg, cfg.alpha_sd, noise=True)
        rel = f"train/sd/sd_{i:04d}.ntsr"
        save_tensor(os.path.join(out_dir, rel), img[None, None])
        manifest["train_sd"].append({"file": rel, "seed": seed})

    for i, seed in enumerate(ranges["eval"]):
        clean = _render(seed, cfg, 1.0, noise=False)
        noisy = _render(seed, cfg, cfg.alpha, noise=True)
        rel_c = f"eval/pairs/pair_{i:04d}_clean.ntsr"
        rel_n = f"eval/pairs/pair_{i:04d}_noisy.ntsr"
        save_tensor(os.path.join(out_dir, rel_c), clean[None, None])
        save_tensor(os.path.join(out_dir, rel_n), noisy[None, None])
        manifest["eval_pairs"].append({"clean": rel_c, "noisy": rel_n, "seed": seed})

    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest
