"""Synthetic CT pipeline: phantoms, projection, dose noise, reconstruction."""

import json

import numpy as np
import pytest

from cfcgan.ctsim import (DataConfig, build_dataset, default_n_det, dose_noise,
                          fbp, hu_to_mu, make_phantom, normalize_hu, radon,
                          rasterize, reconstruct_normalized, write_pgm)
from cfcgan.errors import DatasetError
from cfcgan.metrics import psnr
from cfcgan.tensor import load_tensor
from cfcgan.wavelet import wavelet_residual


class TestPhantom:
    def test_empty_phantom_is_air(self):
        from cfcgan.ctsim import Phantom
        img = rasterize(Phantom(ellipses=[], grid=32))
        np.testing.assert_array_equal(img, -1000.0)
        np.testing.assert_array_equal(normalize_hu(img), -0.25)

    def test_ellipse_area_matches_analytic(self):
        from cfcgan.ctsim import Ellipse, Phantom
        grid = 256
        a = b = grid / 4
        ph = Phantom(ellipses=[Ellipse(grid / 2, grid / 2, a, b, 0.0, 100.0)],
                     grid=grid)
        img = rasterize(ph)
        count = (img > -1000).sum()
        assert abs(count - np.pi * a * b) <= 0.02 * np.pi * a * b

    def test_deterministic_from_seed(self):
        _, img1 = make_phantom(123, 64)
        _, img2 = make_phantom(123, 64)
        np.testing.assert_array_equal(img1, img2)

    def test_values_within_hu_range(self):
        for seed in range(20):
            _, img = make_phantom(seed, 32)
            assert img.min() >= -1000.0 and img.max() <= 3000.0


class TestRadon:
    def test_zero_image_zero_sinogram(self):
        sino = radon(np.zeros((32, 32)), 20)
        np.testing.assert_array_equal(sino.p, 0.0)
        assert sino.p.shape == (20, default_n_det(32))

    def test_disk_chord_maximum(self):
        grid, R, v = 128, 30.0, 0.05
        yy, xx = np.mgrid[0:grid, 0:grid]
        c = (grid - 1) / 2
        disk = np.where((xx - c) ** 2 + (yy - c) ** 2 <= R * R, v, 0.0)
        sino = radon(disk, 90)
        maxima = sino.p.max(axis=1)
        np.testing.assert_allclose(maxima, 2 * R * v, rtol=0.02)

    def test_centered_disk_rotation_invariance(self):
        # anti-aliased disk (supersampled rasterization) so the comparison
        # measures the projector, not the staircase edge of a binary mask
        grid, R, ss = 128, 25.0, 4
        yy, xx = np.mgrid[0:grid * ss, 0:grid * ss]
        c = (grid * ss - 1) / 2
        hi = ((xx - c) ** 2 + (yy - c) ** 2 <= (R * ss) ** 2).astype(float)
        disk = hi.reshape(grid, ss, grid, ss).mean(axis=(1, 3))
        sino = radon(disk, 45)
        ref = sino.p[0]
        for row in sino.p:
            assert np.linalg.norm(row - ref) <= 0.01 * np.linalg.norm(ref)

    def test_non_square_rejected(self):
        with pytest.raises(DatasetError):
            radon(np.zeros((16, 32)), 10)


class TestDoseNoise:
    def test_high_intensity_limit_recovers_p(self):
        rng = np.random.default_rng(0)
        p = np.abs(rng.standard_normal((30, 40))) * 2.0
        from cfcgan.ctsim import SinogramSet
        sino = SinogramSet(angles=np.linspace(0, np.pi, 30, endpoint=False),
                           n_det=40, p=p, i0=1e9, alpha=1.0)
        noisy = dose_noise(sino, 1e9, 1.0, seed=7)
        assert np.abs(noisy.p - p).max() <= 1e-2

    def test_zero_line_integral_unbiased(self):
        from cfcgan.ctsim import SinogramSet
        n = 200_000
        sino = SinogramSet(angles=np.zeros(1), n_det=n, p=np.zeros((1, n)),
                           i0=1e5, alpha=1.0)
        noisy = dose_noise(sino, 1e5, 1.0, seed=3)
        # mean of p_hat ~ 0 within 3 standard errors (se ~ 1/sqrt(I0*n))
        se = 1.0 / np.sqrt(1e5 * n)
        assert abs(noisy.p.mean()) <= 3 * se

    def test_same_seed_identical(self):
        _, img = make_phantom(5, 32)
        sino = radon(hu_to_mu(img), 20)
        a = dose_noise(sino, 1e4, 0.25, seed=11)
        b = dose_noise(sino, 1e4, 0.25, seed=11)
        np.testing.assert_array_equal(a.p, b.p)
        c = dose_noise(sino, 1e4, 0.25, seed=12)
        assert np.abs(c.p - a.p).max() > 0

    def test_parameter_validation(self):
        sino = radon(np.zeros((16, 16)), 10)
        with pytest.raises(DatasetError):
            dose_noise(sino, -1.0, 0.5, 0)
        with pytest.raises(DatasetError):
            dose_noise(sino, 1e5, 1.5, 0)

    def test_counts_clamped_so_log_finite(self):
        from cfcgan.ctsim import SinogramSet
        sino = SinogramSet(angles=np.zeros(1), n_det=10,
                           p=np.full((1, 10), 50.0), i0=10.0, alpha=0.1)
        noisy = dose_noise(sino, 10.0, 0.1, seed=0)
        assert np.isfinite(noisy.p).all()


class TestFbp:
    def test_zero_sinogram_zero_image(self):
        sino = radon(np.zeros((32, 32)), 30)
        np.testing.assert_array_equal(fbp(sino, 32), 0.0)

    def test_disk_round_trip_interior_mean(self):
        grid, R, v = 128, 30.0, 0.04
        yy, xx = np.mgrid[0:grid, 0:grid]
        c = (grid - 1) / 2
        mask = (xx - c) ** 2 + (yy - c) ** 2 <= R * R
        disk = np.where(mask, v, 0.0)
        rec = fbp(radon(disk, 180), grid)
        interior = (xx - c) ** 2 + (yy - c) ** 2 <= (R - 3) ** 2
        assert abs(rec[interior].mean() - v) <= 0.05 * v

    def test_linearity(self, rng):
        _, img1 = make_phantom(7, 64)
        _, img2 = make_phantom(8, 64)
        s1 = radon(hu_to_mu(img1), 60)
        s2 = radon(hu_to_mu(img2), 60)
        import dataclasses
        combo = dataclasses.replace(s1, p=1.3 * s1.p - 0.6 * s2.p)
        lhs = fbp(combo, 64)
        rhs = 1.3 * fbp(s1, 64) - 0.6 * fbp(s2, 64)
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)

    def test_phantom_reconstruction_fidelity_floor(self):
        # radon -> fbp round trip keeps PSNR >= 25 dB at grid 128, 180 angles
        _, img_hu = make_phantom(42, 128)
        rec = reconstruct_normalized(radon(hu_to_mu(img_hu), 180), 128)
        assert psnr(rec, normalize_hu(img_hu)) >= 25.0


class TestBuildDataset:
    @pytest.fixture(scope="class")
    def dataset(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("ds")
        cfg = DataConfig(grid=32, n_train_ld=5, n_train_sd=4, n_eval=3,
                         i0=2000.0, n_angles=60, seed=500)
        manifest = build_dataset(cfg, out)
        return out, cfg, manifest

    def test_manifest_counts(self, dataset):
        out, cfg, manifest = dataset
        assert len(manifest["train_ld"]) == 5
        assert len(manifest["train_sd"]) == 4
        assert len(manifest["eval_pairs"]) == 3
        with open(out / "manifest.json") as f:
            on_disk = json.load(f)
        assert on_disk["seed_ranges"] == {"ld": [500, 505], "sd": [505, 509],
                                          "eval": [509, 512]}

    def test_eval_pair_re_render_bit_exact(self, dataset):
        out, cfg, manifest = dataset
        pair = manifest["eval_pairs"][1]
        clean = load_tensor(out / pair["clean"])
        re_rendered = reconstruct_normalized(
            radon(hu_to_mu(make_phantom(pair["seed"], 32)[1]), cfg.n_angles), 32)
        np.testing.assert_array_equal(clean[0, 0], re_rendered)

    def test_overlapping_seed_ranges_rejected(self, tmp_path):
        cfg = DataConfig(grid=32, n_train_ld=5, n_train_sd=5, n_eval=2,
                         seed=100, sd_seed_start=102)
        with pytest.raises(DatasetError, match="overlap"):
            build_dataset(cfg, tmp_path)

    def test_grid_divisibility_enforced(self, tmp_path):
        cfg = DataConfig(grid=34, levels=2)
        with pytest.raises(DatasetError, match="divisible"):
            build_dataset(cfg, tmp_path)

    def test_low_dose_has_higher_residual_variance(self, tmp_path_factory):
        # alpha = 0.25 at I0 = 1e5: low-dose eval residual variance exceeds
        # the clean partner's in >= 99% of pairs
        out = tmp_path_factory.mktemp("var")
        cfg = DataConfig(grid=64, n_train_ld=1, n_train_sd=1, n_eval=200,
                         alpha=0.25, i0=1e5, n_angles=90, seed=9000)
        manifest = build_dataset(cfg, out)
        wins = 0
        for pair in manifest["eval_pairs"]:
            clean = load_tensor(out / pair["clean"])
            noisy = load_tensor(out / pair["noisy"])
            rc, _ = wavelet_residual(clean, 2)
            rn, _ = wavelet_residual(noisy, 2)
            wins += rn.data.var() > rc.data.var()
        assert wins >= 0.99 * len(manifest["eval_pairs"])


class TestPgm:
    def test_header_and_window(self, tmp_path, rng):
        img = rng.uniform(-0.25, 0.25, size=(16, 16))
        path = tmp_path / "img.pgm"
        write_pgm(path, img)
        blob = path.read_bytes()
        assert blob.startswith(b"P5\n# window -1000 1000 HU")
        header_end = blob.index(b"65535\n") + 6
        pix = np.frombuffer(blob[header_end:], dtype=">u2").reshape(16, 16)
        expected = np.clip((img * 4000 + 1000) / 2000, 0, 1) * 65535
        np.testing.assert_allclose(pix, expected.astype(np.uint16), atol=1)
