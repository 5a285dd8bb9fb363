"""Cycle-free adversarial training in the wavelet residual domain.

One generator, one discriminator: each iteration takes a discriminator
step on least-squares scores of real standard-dose residuals against
generated ones, then a generator step on twice the adversarial loss plus
eta times the identity term. There is no cycle-consistency term to
optimize; ``cycle_loss_probe`` exists to demonstrate that it vanishes
identically for the invertible generator.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from . import checkpoint as ckpt
from .discriminator import Discriminator, lsgan_d_loss, lsgan_g_loss
from .errors import DatasetError, TrainingDiverged
from .invertible import DET_FLOOR, Generator
from .tensor import AdamState, Tape, Tensor, adam_step, load_tensor
from .wavelet import residual_project, wavelet_residual


@dataclass
class TrainConfig:
    eta: float = 10.0
    lowband_weight: float = 1000.0  # pins the generator lowband output near zero
    lowband_tol: float = 2e-4       # dead zone: leakage below this is free
    lr: float = 1e-4
    lr_halving_period: int = 50_000
    total_iters: int = 2_000
    batch: int = 1
    seed: int = 1234
    levels: int = 2           # wavelet decomposition depth
    blocks: int = 4           # invertible blocks
    width: int = 32           # coupling-net latent channels
    disc_widths: tuple[int, int, int] = (64, 128, 256)
    checkpoint_period: int = 500
    w_init: str = "near_identity"
    precision: str = "f64"

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.lr_halving_period < 1 or self.checkpoint_period < 1:
            raise ValueError("periods must be >= 1")
        if self.precision not in ("f64", "f32"):
            raise ValueError(f"precision must be f64|f32, got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """Initial rate halved every lr_halving_period iterations."""
    return cfg.lr * 0.5 ** (iteration // cfg.lr_halving_period)


def identity_loss(r: Tensor, gen: Generator) -> Tensor:
    """Mean absolute deviation of the generator from the identity on a
    low-dose residual batch."""
    fake = gen.forward(r)
    return (r - fake).abs().mean()


def _require_finite(value: float, name: str, it: int):
    if not np.isfinite(value):
        raise TrainingDiverged(f"{name} became non-finite ({value}) at iteration {it}")


def train_step(batch_ld: Tensor, batch_sd: Tensor, gen: Generator, disc: Discriminator,
               opt_g: AdamState, opt_d: AdamState, cfg: TrainConfig,
               iteration: int) -> dict[str, float]:
    """One alternating update (discriminator first, then generator) on an
    unpaired image batch; returns the loss record."""
    lr = lr_schedule(iteration, cfg)
    r_ld, _ = wavelet_residual(batch_ld, cfg.levels)
    r_sd, _ = wavelet_residual(batch_sd, cfg.levels)

    gen_params = gen.parameters()
    disc_params = disc.parameters()

    tape_g = Tape()
    with tape_g:
        fake = gen.forward(r_ld, update_sn=True)
        # both nets see residuals: the discriminator judges the generator
        # output confined to the residual subspace, exactly what the
        # denoiser will emit
        fake_res = residual_project(fake, cfg.levels)

    with Tape() as tape_d:
        d_loss = lsgan_d_loss(disc.forward(r_sd, mode="train"),
                              disc.forward(fake_res.detach(), mode="train"))
    _require_finite(d_loss.item(), "d_loss", iteration)
    for p in disc_params:
        p.grad = None
    tape_d.backward(d_loss)
    adam_step(disc_params, [p.grad for p in disc_params], opt_d, lr)

    with tape_g:
        g_adv = lsgan_g_loss(disc.forward(fake_res, mode="train"))
        g_id = (r_ld - fake).abs().mean()
        # restoring force on the deployment-invisible lowband direction:
        # without it the lowband of G(r) random-walks under shared-parameter
        # updates (the identity term's sign gradient is diluted once noise
        # removal dominates the deviation field, so it cannot pin it).
        # Dead-zone L1 via relu(z) = (z + |z|)/2: no gradient inside the
        # tolerance band, so the equilibrium leaves ADAM's moments clean.
        excess = (fake - fake_res).abs() - cfg.lowband_tol
        g_lb = ((excess + excess.abs()) * 0.5).mean()
        g_loss = 2.0 * g_adv + cfg.eta * g_id + cfg.lowband_weight * g_lb
    _require_finite(g_loss.item(), "g_loss", iteration)
    for p in gen_params + disc_params:
        p.grad = None
    tape_g.backward(g_loss)
    w_before = [b.mix.w.data for b in gen.blocks]
    adam_step(gen_params, [p.grad for p in gen_params], opt_g, lr)

    # invertibility guard: roll back any mixing update that went singular
    for block, old in zip(gen.blocks, w_before):
        block.mix.refresh()
        if abs(block.mix.det) <= DET_FLOOR:
            block.mix.w.data = old
            block.mix.refresh()

    return {"d_loss": d_loss.item(), "g_adv": g_adv.item(),
            "g_id": g_id.item(), "lr": lr}


def _project_residual(x: np.ndarray, levels: int) -> np.ndarray:
    r, _ = wavelet_residual(x, levels)
    return r.data


def denoise(y_ld: Tensor, gen: Generator, levels: int) -> Tensor:
    """Subtract the extracted noise pattern r - G(r), confined to the
    residual subspace: the noise estimate is high-frequency by definition,
    so the wavelet lowband passes through exactly and an identity
    generator is a bit-exact pass-through."""
    r, _ = wavelet_residual(y_ld, levels)
    fake = gen.forward(r)
    pattern = _project_residual(r.data - fake.data, levels)
    return Tensor(y_ld.data - pattern)


def synthesize_noise(x_sd: Tensor, gen: Generator, levels: int) -> Tensor:
    """Inverse mapping: produce a low-dose-like image from a standard-dose
    input using the analytic generator inverse (no second network). The
    injected noise pattern is confined to the residual subspace, mirroring
    denoise."""
    r, _ = wavelet_residual(x_sd, levels)
    inv = gen.inverse(r)
    pattern = _project_residual(r.data - inv.data, levels)
    return Tensor(x_sd.data - pattern)


def cycle_loss_probe(sample_x: Tensor, sample_y: Tensor, gen: Generator) -> float:
    """Executable witness that the cycle-consistency term vanishes when the
    backward map is the generator's exact inverse: evaluates
    mean|x - G(G^-1(x))| + mean|y - G^-1(G(y))| for the current parameters."""
    gx = gen.forward(gen.inverse(sample_x))
    term_x = float(np.abs(sample_x.data - gx.data).mean())
    gy = gen.inverse(gen.forward(sample_y))
    term_y = float(np.abs(sample_y.data - gy.data).mean())
    return term_x + term_y


class TrainData:
    """In-memory unpaired training pools loaded from a dataset directory."""

    def __init__(self, data_dir, dtype=np.float64):
        manifest_path = os.path.join(os.fspath(data_dir), "manifest.json")
        if not os.path.exists(manifest_path):
            raise DatasetError(f"no manifest.json in {data_dir}")
        with open(manifest_path) as f:
            self.manifest = json.load(f)
        root = os.fspath(data_dir)
        self.ld = np.concatenate(
            [load_tensor(os.path.join(root, e["file"])) for e in self.manifest["train_ld"]],
            axis=0).astype(dtype)
        self.sd = np.concatenate(
            [load_tensor(os.path.join(root, e["file"])) for e in self.manifest["train_sd"]],
            axis=0).astype(dtype)
        if not len(self.ld) or not len(self.sd):
            raise DatasetError(f"dataset at {data_dir} has an empty training pool")


def _sample_batch(pool: np.ndarray, rng: np.random.Generator, batch: int) -> Tensor:
    idx = rng.integers(0, pool.shape[0], size=batch)
    return Tensor(pool[idx])


def run_training(cfg: TrainConfig, data_dir, out_dir, resume=None,
                 log_every: int = 100) -> str:
    """Full training loop: checkpoints every checkpoint_period iterations,
    appends the loss log, returns the final checkpoint path. ``resume``
    continues bit-exactly from a saved checkpoint."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    data = TrainData(data_dir, cfg.dtype)

    cfg_dict = asdict(cfg)
    cfg_dict["disc_widths"] = list(cfg.disc_widths)

    if resume is None:
        gen = Generator.create(blocks=cfg.blocks, levels=cfg.levels, width=cfg.width,
                               seed=cfg.seed, w_init=cfg.w_init, dtype=cfg.dtype)
        disc = Discriminator(widths=cfg.disc_widths, seed=cfg.seed, dtype=cfg.dtype)
        opt_g = AdamState.create(gen.parameters())
        opt_d = AdamState.create(disc.parameters())
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
        start = 0
    else:
        saved_cfg, start, gen, disc, opt_g, opt_d, rng_state = ckpt.load_checkpoint(resume)
        for key, val in cfg_dict.items():
            # run length and snapshot cadence may change across resumes;
            # everything that shapes the models or the update math may not
            if key in ("total_iters", "checkpoint_period"):
                continue
            if saved_cfg.get(key) != val:
                raise DatasetError(
                    f"resume config mismatch on {key!r}: checkpoint has "
                    f"{saved_cfg.get(key)!r}, requested {val!r}")
        rng = np.random.default_rng()
        rng.bit_generator.state = rng_state

    log_path = os.path.join(out_dir, "loss_log.csv")
    if resume is None or not os.path.exists(log_path):
        with open(log_path, "w", newline="") as f:
            csv.writer(f).writerow(["iter", "d_loss", "g_adv", "g_id", "lr"])

    diverged = None
    for it in range(start, cfg.total_iters):
        batch_ld = _sample_batch(data.ld, rng, cfg.batch)
        batch_sd = _sample_batch(data.sd, rng, cfg.batch)
        try:
            losses = train_step(batch_ld, batch_sd, gen, disc, opt_g, opt_d, cfg, it)
        except TrainingDiverged as exc:
            # diagnostic dump of the offending batch, then abort
            from .tensor import save_tensor
            save_tensor(os.path.join(out_dir, f"diverged_{it:06d}_ld.ntsr"), batch_ld.data)
            save_tensor(os.path.join(out_dir, f"diverged_{it:06d}_sd.ntsr"), batch_sd.data)
            diverged = exc
            break
        with open(log_path, "a", newline="") as f:
            csv.writer(f).writerow([it, f"{losses['d_loss']:.10e}", f"{losses['g_adv']:.10e}",
                                    f"{losses['g_id']:.10e}", f"{losses['lr']:.10e}"])
        done = it + 1
        if done % cfg.checkpoint_period == 0 and done < cfg.total_iters:
            ckpt.save_checkpoint(os.path.join(out_dir, f"ckpt_{done:06d}.cfcg"),
                                 cfg_dict, done, gen, disc, opt_g, opt_d,
                                 rng.bit_generator.state)
    if diverged is not None:
        raise diverged

    final = os.path.join(out_dir, "ckpt_final.cfcg")
    ckpt.save_checkpoint(final, cfg_dict, cfg.total_iters, gen, disc, opt_g, opt_d,
                         rng.bit_generator.state)
    return final
