"""Acceptance suite: one test per criterion, each printing a PASS line.

The expensive desk-scale experiment (data simulation, two seeded training
runs, evaluation) is built once per session by fixtures; structural
criteria run on fresh models. Wall-clock budgets are pro-rated from the
8-core reference budget to the cores actually available.
"""

import hashlib
import json
import math
import os
import time

import numpy as np
import pytest

from cfcgan import checkpoint as ckpt
from cfcgan.cli import main as cli_main
from cfcgan.discriminator import Discriminator, lsgan_d_loss, lsgan_g_loss
from cfcgan.invertible import (Generator, sn_sigma, spectral_normalize,
                               top_singular_value)
from cfcgan.selfcheck import det_cofactor
from cfcgan.tensor import Tape, Tensor, channel_slice, concat_channels, load_tensor
from cfcgan.training import cycle_loss_probe, denoise, synthesize_noise
from cfcgan.wavelet import dwt2, idwt2, wavelet_residual
from conftest import central_diff

DESK_ITERS = 2_000
BUDGET_SCALE = max(1.0, 8.0 / os.cpu_count())


def random_generator(seed, blocks=4, width=32):
    gen = Generator.create(blocks=blocks, levels=2, width=width, seed=seed)
    gen.randomize(np.random.default_rng(seed + 10_000), scale=0.1)
    gen.refresh_mixing()
    return gen


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """gen-data + two identically seeded desk training runs + eval."""
    root = tmp_path_factory.mktemp("desk")
    data = root / "data"
    t0 = time.monotonic()
    assert cli_main(["gen-data", "--preset", "desk", "--out", str(data)]) == 0
    run_a = root / "runA"
    assert cli_main(["train", "--preset", "desk", "--data", str(data),
                     "--out", str(run_a)]) == 0
    report = root / "report.csv"
    assert cli_main(["eval", "--checkpoint", str(run_a / "ckpt_final.cfcg"),
                     "--data", str(data), "--out", str(report)]) == 0
    elapsed_a = time.monotonic() - t0
    run_b = root / "runB"
    assert cli_main(["train", "--preset", "desk", "--data", str(data),
                     "--out", str(run_b)]) == 0
    return {"data": data, "ckpt_a": run_a / "ckpt_final.cfcg",
            "ckpt_b": run_b / "ckpt_final.cfcg", "report": report,
            "elapsed_a": elapsed_a}


@pytest.fixture(scope="session")
def trained(desk):
    _, _, gen, _, _, _, _ = ckpt.load_checkpoint(desk["ckpt_a"])
    return gen


def report(criterion, detail):
    print(f"PASS criterion {criterion}: {detail}")


class TestCriterion1Invertibility:
    def test_round_trip_100_draws_both_precisions(self, rng):
        t0 = time.monotonic()
        worst64 = worst32 = 0.0
        for k in range(100):
            gen = random_generator(1_000 + k, blocks=4, width=8)
            r = Tensor(rng.standard_normal((1, 1, 64, 64)))
            back = gen.inverse(gen.forward(r))
            worst64 = max(worst64, float(np.abs(back.data - r.data).max()))
            g32 = gen.astype(np.float32)
            r32 = Tensor(r.data.astype(np.float32))
            back32 = g32.inverse(g32.forward(r32))
            worst32 = max(worst32, float(np.abs(back32.data - r32.data).max()))
        elapsed = time.monotonic() - t0
        assert worst64 <= 1e-10
        assert worst32 <= 1e-4
        assert elapsed <= 60 * BUDGET_SCALE
        report(1, f"roundtrip inf-norm: f64 {worst64:.2e} (<=1e-10), "
                  f"f32 {worst32:.2e} (<=1e-4), {elapsed:.0f}s")


class TestCriterion2CycleLossElimination:
    def test_probe_vanishes_for_arbitrary_parameters(self, rng):
        t0 = time.monotonic()
        worst = 0.0
        for k in range(20):
            gen = random_generator(2_000 + k, blocks=4, width=8)
            x = Tensor(rng.standard_normal((1, 1, 32, 32)))
            y = Tensor(rng.standard_normal((1, 1, 32, 32)))
            worst = max(worst, cycle_loss_probe(x, y, gen))
        elapsed = time.monotonic() - t0
        assert worst <= 1e-8
        assert elapsed <= 60 * BUDGET_SCALE
        report(2, f"cycle-consistency probe max {worst:.2e} (<=1e-8) over 20 "
                  f"parameter draws, {elapsed:.0f}s")


class TestCriterion3LogDeterminant:
    def test_logdet_formula_and_jacobian_oracle(self, rng):
        t0 = time.monotonic()
        gen = random_generator(3_001, blocks=2, width=4)
        # closed form: spatial positions of the squeezed grid times log|det W|
        h = w = 4
        formula = sum((h // 2) * (w // 2) * math.log(abs(det_cofactor(
            b.mix.w.data.astype(np.float64)))) for b in gen.blocks)
        assert abs(gen.logdet(h, w) - formula) <= 1e-10
        # dense central-difference Jacobian oracle on the 4x4 spatial toy
        x0 = rng.standard_normal((1, 1, 4, 4))
        dim = x0.size
        jac = np.zeros((dim, dim))
        eps = 1e-6
        for col in range(dim):
            flat = x0.copy().reshape(-1)
            flat[col] += eps
            hi = gen.forward(Tensor(flat.reshape(x0.shape))).data.reshape(-1)
            flat[col] -= 2 * eps
            lo = gen.forward(Tensor(flat.reshape(x0.shape))).data.reshape(-1)
            jac[:, col] = (hi - lo) / (2 * eps)
        _, logdet_fd = np.linalg.slogdet(jac)
        assert abs(gen.logdet(4, 4) - logdet_fd) <= 1e-6
        elapsed = time.monotonic() - t0
        assert elapsed <= 120 * BUDGET_SCALE
        report(3, f"logdet {gen.logdet(4, 4):+.6f} = h*w*sum log|det W| "
                  f"(cofactor dev {abs(gen.logdet(h, w) - formula):.1e}), FD-Jacobian "
                  f"dev {abs(gen.logdet(4, 4) - logdet_fd):.1e} (<=1e-6), {elapsed:.0f}s")

    def test_coupling_contributes_exactly_zero(self):
        # autodiff Jacobian of one coupling layer on a 4x2x2 toy
        from cfcgan.invertible import CouplingNet, coupling_forward
        nets = [CouplingNet(4, np.random.default_rng(30 + k), np.float64)
                for k in range(4)]
        for k, net in enumerate(nets):
            net.w3.data = 0.2 * np.random.default_rng(40 + k).standard_normal(
                net.w3.data.shape)
        x0 = np.random.default_rng(3).standard_normal((1, 4, 2, 2))
        dim = x0.size
        jac = np.zeros((dim, dim))
        for row in range(dim):
            x = Tensor(x0.copy(), requires_grad=True)
            with Tape() as t:
                parts = [channel_slice(x, i, i + 1) for i in range(4)]
                flat = concat_channels(coupling_forward(parts, nets))
                seed = np.zeros_like(x0)
                seed.reshape(-1)[row] = 1.0
                loss = (flat * Tensor(seed)).sum()
            t.backward(loss)
            jac[row] = x.grad.reshape(-1)
        sign, logdet = np.linalg.slogdet(jac)
        assert sign == 1.0 and abs(logdet) <= 1e-8
        report(3, f"coupling-layer autodiff log-Jacobian {logdet:.2e} (<=1e-8)")


class TestCriterion4GradientCorrectness:
    def test_full_stack_vs_finite_differences(self):
        t0 = time.monotonic()
        gen = Generator.create(blocks=4, levels=2, width=32, seed=4_001,
                               w_init="near_identity")
        for block in gen.blocks:  # nonzero output convs exercise every path
            for net in block.nets:
                net.w3.data = 0.05 * np.random.default_rng(7).standard_normal(
                    net.w3.data.shape)
        disc = Discriminator(widths=(16, 32, 32), seed=4_002)
        data_rng = np.random.default_rng(4_003)
        r_ld = Tensor(data_rng.standard_normal((1, 1, 16, 16)))
        r_sd = Tensor(data_rng.standard_normal((1, 1, 16, 16)))

        def g_loss():
            fake = gen.forward(r_ld)
            adv = lsgan_g_loss(disc.forward(fake, mode="eval"))
            ident = (r_ld - fake).abs().mean()
            return 2.0 * adv + 10.0 * ident

        def d_loss():
            fake = gen.forward(r_ld)
            return lsgan_d_loss(disc.forward(r_sd, mode="eval"),
                                disc.forward(fake.detach(), mode="eval"))

        coord_rng = np.random.default_rng(4_004)
        worst = 0.0
        for loss_fn, params in ((g_loss, list(gen.named_parameters())),
                                (d_loss, list(disc.named_parameters()))):
            for p in gen.parameters() + disc.parameters():
                p.grad = None
            with Tape() as t:
                loss = loss_fn()
            t.backward(loss)
            grads = {name: (None if p.grad is None else p.grad.copy())
                     for name, p in params}
            for name, p in params:
                if grads[name] is None:
                    continue
                flat = p.data.reshape(-1)
                ga = grads[name].reshape(-1)
                k = int(coord_rng.integers(0, flat.size))
                fd = central_diff(lambda: loss_fn().item(), flat, k, eps=1e-6)
                rel = abs(fd - ga[k]) / max(1.0, abs(fd), abs(ga[k]))
                worst = max(worst, rel)
                assert rel <= 1e-3, f"{name}: fd {fd} vs analytic {ga[k]}"
        elapsed = time.monotonic() - t0
        assert elapsed <= 300 * BUDGET_SCALE
        report(4, f"generator+discriminator+losses vs central differences: "
                  f"worst rel err {worst:.2e} (<=1e-3), {elapsed:.0f}s")


class TestCriterion5WaveletResidual:
    def test_reconstruction_and_lowband_preservation(self, rng, trained):
        t0 = time.monotonic()
        worst_pr = 0.0
        for _ in range(50):
            img = rng.standard_normal((1, 1, 64, 64))
            levels = int(rng.integers(1, 4))
            rec = idwt2(dwt2(img, levels)).data
            worst_pr = max(worst_pr, np.abs(rec - img).max() / np.abs(img).max())
        assert worst_pr <= 1e-10
        img = rng.standard_normal((1, 1, 64, 64))
        res, low = wavelet_residual(img, 2)
        ident = np.abs(res.data + low.data - img).max()
        assert ident <= 1e-10
        # lowband preservation by denoise with the trained generator
        y = Tensor(0.1 * rng.standard_normal((1, 1, 64, 64)))
        out = denoise(y, trained, 2)
        drift = np.abs(dwt2(out.data, 2).ll - dwt2(y.data, 2).ll).max()
        assert drift <= 1e-10
        elapsed = time.monotonic() - t0
        assert elapsed <= 60 * BUDGET_SCALE
        report(5, f"PR {worst_pr:.2e}, residual identity {ident:.2e}, denoise "
                  f"lowband drift {drift:.2e} (all <=1e-10), {elapsed:.0f}s")


class TestCriterion6SpectralNormalization:
    def test_sigma_range_and_svd_cross_check(self):
        gen = Generator.create(blocks=4, levels=2, width=32, seed=6_001,
                               w_init="near_identity")
        worst_range = 0.0
        worst_err = 0.0
        for block in gen.blocks:
            for net in block.nets:
                for w, state in net.sn_weights():
                    for _ in range(50):
                        spectral_normalize(w, state, update=True)
                    w_bar = spectral_normalize(w, state, update=False)
                    top = top_singular_value(
                        w_bar.data.reshape(w_bar.data.shape[0], -1), iters=500)
                    worst_range = max(worst_range, abs(top - 1.0))
                    sigma_svd = float(np.linalg.svd(
                        w.data.reshape(w.data.shape[0], -1), compute_uv=False)[0])
                    prev = sn_sigma(w, state)
                    for _ in range(2000):
                        spectral_normalize(w, state, update=True)
                        cur = sn_sigma(w, state)
                        if abs(cur - prev) < 1e-14:
                            break
                        prev = cur
                    worst_err = max(worst_err, abs(sn_sigma(w, state) - sigma_svd))
        assert 0.95 <= 1.0 - worst_range and 1.0 + worst_range <= 1.05
        assert worst_err <= 1e-6
        report(6, f"after 50 warmup iterations sigma(W_bar) in "
                  f"[{1 - worst_range:.4f}, {1 + worst_range:.4f}] (within [0.95, 1.05]); "
                  f"converged estimate vs SVD {worst_err:.2e} (<=1e-6)")


class TestCriterion7DeskExperiment:
    def test_end_to_end_improvement(self, desk):
        with open(desk["data"] / "manifest.json") as f:
            manifest = json.load(f)
        assert len(manifest["train_ld"]) == 200
        assert len(manifest["train_sd"]) == 200
        assert len(manifest["eval_pairs"]) == 50
        assert manifest["grid"] == 64 and manifest["alpha"] == 0.25
        import csv
        with open(desk["report"]) as f:
            rows = list(csv.DictReader(f))
        mean_row = rows[-1]
        assert mean_row["pair_id"] == "mean"
        dpsnr = float(mean_row["dpsnr"])
        dssim = float(mean_row["dssim"])
        assert dpsnr >= 2.0
        assert dssim >= 0.03
        budget = 45 * 60 * BUDGET_SCALE
        assert desk["elapsed_a"] <= budget
        report(7, f"desk run: dPSNR {dpsnr:+.3f} dB (>=+2), dSSIM {dssim:+.4f} "
                  f"(>=+0.03), wall {desk['elapsed_a'] / 60:.1f} min "
                  f"(budget {budget / 60:.0f} min on {os.cpu_count()} cores)")


class TestCriterion8InverseMapping:
    def test_noise_synthesis_and_round_trip(self, desk, trained):
        with open(desk["data"] / "manifest.json") as f:
            manifest = json.load(f)
        gen32 = trained.astype(np.float32)
        wins = 0
        worst_rt = 0.0
        for pair in manifest["eval_pairs"]:
            clean = load_tensor(desk["data"] / pair["clean"])
            x = Tensor(clean)
            synth = synthesize_noise(x, trained, 2)
            r_in, _ = wavelet_residual(x, 2)
            r_out, _ = wavelet_residual(synth, 2)
            wins += r_out.data.var() > r_in.data.var()
            x32 = Tensor(clean.astype(np.float32))
            rt = denoise(synthesize_noise(x32, gen32, 2), gen32, 2)
            worst_rt = max(worst_rt, float(np.abs(rt.data - x32.data).max()))
        assert wins >= 0.9 * len(manifest["eval_pairs"])
        assert worst_rt <= 1e-3
        report(8, f"residual variance increased on {wins}/50 standard-dose eval "
                  f"images (>=45); denoise(synthesize_noise(x)) f32 deviation "
                  f"{worst_rt:.2e} (<=1e-3)")


class TestCriterion9ComplexityReporting:
    def test_info_counts_and_reference_bound(self, capsys):
        assert cli_main(["info", "--preset", "desk", "--json"]) == 0
        desk_summary = json.loads(capsys.readouterr().out.strip())

        def oracle(blocks, width):
            per_net = width ** 2 + 38 * width + 1
            return blocks * (16 + 4 * per_net)

        assert desk_summary["generator_params"] == oracle(4, 32)
        k2 = 16
        disc_oracle = (64 * k2 + 64) + (64 * 128 * k2 + 128) + 256 \
            + (128 * 256 * k2 + 256) + 512 + (256 * k2 + 1)
        assert desk_summary["discriminator_params"] == disc_oracle

        assert cli_main(["info", "--preset", "paper", "--json"]) == 0
        paper_summary = json.loads(capsys.readouterr().out.strip())
        g_paper = paper_summary["generator_params"]
        assert g_paper == oracle(4, 256)
        assert g_paper < 2_000_000
        assert 120_432 <= g_paper  # same order of magnitude as 1,204,320
        report(9, f"desk generator {desk_summary['generator_params']:,} and "
                  f"discriminator {disc_oracle:,} match the closed form; paper-preset "
                  f"generator {g_paper:,} (reference 1,204,320; hard bound < 2,000,000)")


class TestCriterion10Determinism:
    def test_identically_seeded_runs_bit_identical(self, desk):
        da = desk["ckpt_a"].read_bytes()
        db = desk["ckpt_b"].read_bytes()
        ha = hashlib.sha256(da).hexdigest()
        hb = hashlib.sha256(db).hexdigest()
        assert ha == hb
        report(10, f"two seeded desk runs: final checkpoints byte-identical "
                   f"(sha256 {ha[:16]}...)")
