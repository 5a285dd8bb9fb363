"""Command-line surface: gen-data, train, denoise, synthesize-noise,
eval, info, verify.

Configuration is a flat JSON document resolved in three layers: named
preset, optional config file, then command-line overrides. Unknown keys
are rejected. Every command is deterministic given config plus seed;
``--json`` routes human-readable output to stderr and prints one
machine-readable summary object on stdout.
"""

from __future__ import annotations

import argparse
import glob
import json
import math
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from .ctsim import DataConfig, build_dataset, write_pgm
from .discriminator import Discriminator
from .errors import CheckpointError, TrainingDiverged
from .invertible import Generator, lipschitz_bound
from .metrics import MAX_HU, MAX_NORMALIZED, psnr, ssim
from .selfcheck import run_battery
from .tensor import Tensor, load_tensor, save_tensor
from .training import TrainConfig, denoise, run_training, synthesize_noise

# reference totals from the published configuration; printed for
# comparison only, not an exact-match claim
REFERENCE_GEN_COUNT = 1_204_320
REFERENCE_TOTAL_COUNT = 1_866_721

CONFIG_KEYS: dict[str, type] = {
    "preset": str, "seed": int,
    # data simulation
    "grid": int, "n_train_ld": int, "n_train_sd": int, "n_eval": int,
    "alpha": float, "alpha_sd": float, "i0": float, "n_angles": int,
    "ld_seed_start": int, "sd_seed_start": int, "eval_seed_start": int,
    # training
    "eta": float, "lowband_weight": float, "lowband_tol": float, "lr": float, "lr_halving_period": int, "total_iters": int,
    "batch": int, "levels": int, "blocks": int, "width": int,
    "disc_widths": list, "checkpoint_period": int, "w_init": str,
    "precision": str,
}

PRESETS: dict[str, dict] = {
    "desk": {
        "preset": "desk", "seed": 1234,
        "grid": 64, "n_train_ld": 200, "n_train_sd": 200, "n_eval": 50,
        "alpha": 0.25, "alpha_sd": 1.0, "i0": 1200.0, "n_angles": 180,
        "eta": 10.0, "lowband_weight": 1000.0, "lowband_tol": 2e-4, "lr": 1e-4, "lr_halving_period": 50_000,
        "total_iters": 2_000, "batch": 1, "levels": 2, "blocks": 4,
        "width": 32, "disc_widths": [64, 128, 256],
        "checkpoint_period": 500, "w_init": "near_identity", "precision": "f64",
    },
    "paper": {
        "preset": "paper", "seed": 1234,
        "grid": 512, "n_train_ld": 400, "n_train_sd": 400, "n_eval": 50,
        "alpha": 0.25, "alpha_sd": 1.0, "i0": 1e5, "n_angles": 720,
        "eta": 10.0, "lowband_weight": 1000.0, "lowband_tol": 2e-4, "lr": 1e-4, "lr_halving_period": 50_000,
        "total_iters": 150_000, "batch": 1, "levels": 6, "blocks": 4,
        "width": 256, "disc_widths": [64, 128, 256],
        "checkpoint_period": 10_000, "w_init": "orthogonal", "precision": "f64",
    },
}


class Reporter:
    """Routes human-readable lines away from stdout in --json mode."""

    def __init__(self, json_mode: bool):
        self.json_mode = json_mode
        self.summary: dict = {}

    def say(self, msg: str) -> None:
        print(msg, file=sys.stderr if self.json_mode else sys.stdout)

    def finish(self) -> None:
        if self.json_mode:
            print(json.dumps(self.summary, sort_keys=True))


def _coerce(key: str, raw: str):
    kind = CONFIG_KEYS[key]
    if kind is list:
        return [int(v) for v in raw.split(",")]
    if kind is float:
        return float(raw)
    if kind is int:
        return int(raw)
    return raw


def resolve_config(args) -> dict:
    cfg = dict(PRESETS[args.preset])
    if getattr(args, "config", None):
        with open(args.config) as f:
            overlay = json.load(f)
        unknown = set(overlay) - set(CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(overlay)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key: {key!r}")
        cfg[key] = _coerce(key, raw)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def data_config_from(cfg: dict) -> DataConfig:
    return DataConfig(
        grid=cfg["grid"], n_train_ld=cfg["n_train_ld"], n_train_sd=cfg["n_train_sd"],
        n_eval=cfg["n_eval"], alpha=cfg["alpha"], alpha_sd=cfg["alpha_sd"],
        i0=cfg["i0"], n_angles=cfg["n_angles"], seed=cfg["seed"], levels=cfg["levels"],
        ld_seed_start=cfg.get("ld_seed_start"), sd_seed_start=cfg.get("sd_seed_start"),
        eval_seed_start=cfg.get("eval_seed_start"))


def train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig(
        eta=cfg["eta"], lowband_weight=cfg["lowband_weight"],
        lowband_tol=cfg["lowband_tol"], lr=cfg["lr"], lr_halving_period=cfg["lr_halving_period"],
        total_iters=cfg["total_iters"], batch=cfg["batch"], seed=cfg["seed"],
        levels=cfg["levels"], blocks=cfg["blocks"], width=cfg["width"],
        disc_widths=tuple(cfg["disc_widths"]), checkpoint_period=cfg["checkpoint_period"],
        w_init=cfg["w_init"], precision=cfg["precision"])


def _load_generator(path, precision: str | None = None):
    config, iteration, gen, disc, _, _, _ = ckpt.load_checkpoint(path)
    if precision == "f32":
        gen = gen.astype(np.float32)
    return config, iteration, gen, disc


def cmd_gen_data(args, rep: Reporter) -> int:
    cfg = resolve_config(args)
    manifest = build_dataset(data_config_from(cfg), args.out)
    rep.summary = {"command": "gen-data", "out": args.out,
                   "train_ld": len(manifest["train_ld"]),
                   "train_sd": len(manifest["train_sd"]),
                   "eval_pairs": len(manifest["eval_pairs"])}
    rep.say(f"dataset written to {args.out}: {len(manifest['train_ld'])} low-dose + "
            f"{len(manifest['train_sd'])} standard-dose train images, "
            f"{len(manifest['eval_pairs'])} eval pairs (grid {manifest['grid']})")
    return 0


def cmd_train(args, rep: Reporter) -> int:
    cfg = resolve_config(args)
    tcfg = train_config_from(cfg)
    final = run_training(tcfg, args.data, args.out, resume=args.resume)
    rep.summary = {"command": "train", "final_checkpoint": final,
                   "iterations": tcfg.total_iters}
    rep.say(f"training complete: {final}")
    return 0


def _iter_inputs(path):
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.ntsr")))
    else:
        files = [path]
    for f in files:
        yield f, Tensor(load_tensor(f))


def _run_mapping(args, rep: Reporter, mapping, tag: str) -> int:
    config, _, gen, _ = _load_generator(args.checkpoint, args.precision)
    os.makedirs(args.out, exist_ok=True)
    levels = config["levels"]
    count = 0
    for src, img in _iter_inputs(args.input):
        if args.precision == "f32":
            img = Tensor(img.data.astype(np.float32))
        out = mapping(img, gen, levels)
        diff = Tensor(img.data - out.data)
        stem = os.path.splitext(os.path.basename(src))[0]
        save_tensor(os.path.join(args.out, f"{stem}_{tag}.ntsr"),
                    out.data.astype(np.float64))
        save_tensor(os.path.join(args.out, f"{stem}_diff.ntsr"),
                    diff.data.astype(np.float64))
        write_pgm(os.path.join(args.out, f"{stem}_{tag}.pgm"), out.data[0, 0])
        write_pgm(os.path.join(args.out, f"{stem}_diff.pgm"), diff.data[0, 0],
                  window_hu=(-200.0, 200.0))
        count += 1
    rep.summary = {"command": tag, "images": count, "out": args.out}
    rep.say(f"{tag}: wrote {count} image(s) to {args.out}")
    return 0


def cmd_denoise(args, rep: Reporter) -> int:
    return _run_mapping(args, rep, denoise, "denoised")


def cmd_synthesize(args, rep: Reporter) -> int:
    return _run_mapping(args, rep, synthesize_noise, "lowdose")


def cmd_eval(args, rep: Reporter) -> int:
    config, _, gen, _ = _load_generator(args.checkpoint, args.precision)
    levels = config["levels"]
    data_dir = os.fspath(args.data)
    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    pairs = manifest["eval_pairs"]
    if not pairs:
        raise ValueError(f"no eval pairs in {data_dir}")

    max_val = MAX_HU if args.hu else MAX_NORMALIZED
    scale = 4000.0 if args.hu else 1.0
    rows = []
    for i, pair in enumerate(pairs):
        clean = load_tensor(os.path.join(data_dir, pair["clean"]))
        noisy = load_tensor(os.path.join(data_dir, pair["noisy"]))
        img = Tensor(noisy.astype(np.float32) if args.precision == "f32" else noisy)
        out = denoise(img, gen, levels).data.astype(np.float64)
        c, n = clean * scale, noisy * scale
        o = out * scale
        rows.append({
            "pair_id": f"pair_{i:04d}",
            "psnr_in": psnr(n, c, max_val), "ssim_in": ssim(n, c, max_val),
            "psnr_out": psnr(o, c, max_val), "ssim_out": ssim(o, c, max_val),
        })

    def _mean(key):
        vals = [r[key] for r in rows if math.isfinite(r[key])]
        return float(np.mean(vals)) if vals else math.inf

    means = {k: _mean(k) for k in ("psnr_in", "ssim_in", "psnr_out", "ssim_out")}
    import csv as _csv
    with open(args.out, "w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["pair_id", "psnr_in", "ssim_in", "psnr_out", "ssim_out",
                    "dpsnr", "dssim"])
        for r in rows:
            w.writerow([r["pair_id"], f"{r['psnr_in']:.6f}", f"{r['ssim_in']:.6f}",
                        f"{r['psnr_out']:.6f}", f"{r['ssim_out']:.6f}",
                        f"{r['psnr_out'] - r['psnr_in']:.6f}",
                        f"{r['ssim_out'] - r['ssim_in']:.6f}"])
        w.writerow(["mean", f"{means['psnr_in']:.6f}", f"{means['ssim_in']:.6f}",
                    f"{means['psnr_out']:.6f}", f"{means['ssim_out']:.6f}",
                    f"{means['psnr_out'] - means['psnr_in']:.6f}",
                    f"{means['ssim_out'] - means['ssim_in']:.6f}"])
    rep.summary = {"command": "eval", "pairs": len(rows), "report": args.out, **means,
                   "dpsnr": means["psnr_out"] - means["psnr_in"],
                   "dssim": means["ssim_out"] - means["ssim_in"]}
    rep.say(f"eval over {len(rows)} pairs: input {means['psnr_in']:.3f} dB / "
            f"{means['ssim_in']:.4f} SSIM -> denoised {means['psnr_out']:.3f} dB / "
            f"{means['ssim_out']:.4f} SSIM  (dPSNR {means['psnr_out'] - means['psnr_in']:+.3f} dB, "
            f"dSSIM {means['ssim_out'] - means['ssim_in']:+.4f})")
    return 0


def cmd_info(args, rep: Reporter) -> int:
    if args.checkpoint:
        config, iteration, gen, disc = _load_generator(args.checkpoint)
        source = args.checkpoint
    else:
        cfg = resolve_config(args)
        tcfg = train_config_from(cfg)
        gen = Generator.create(blocks=tcfg.blocks, levels=tcfg.levels, width=tcfg.width,
                               seed=tcfg.seed, w_init=tcfg.w_init, dtype=tcfg.dtype)
        disc = Discriminator(widths=tcfg.disc_widths, seed=tcfg.seed, dtype=tcfg.dtype)
        config = {"preset": args.preset, "blocks": tcfg.blocks, "levels": tcfg.levels,
                  "width": tcfg.width}
        iteration = 0
        source = f"preset {args.preset!r}"

    g_count = gen.param_count()
    d_count = disc.param_count()
    bound = lipschitz_bound(gen)
    dets = gen.mixing_determinants()
    rep.say(f"model from {source} (iteration {iteration})")
    rep.say(f"  blocks L = {len(gen.blocks)}, wavelet levels J = {gen.levels}, "
            f"coupling width c = {gen.width}")
    rep.say(f"  generator parameters:     {g_count:>10,}")
    rep.say(f"  discriminator parameters: {d_count:>10,}")
    rep.say(f"  total parameters:         {g_count + d_count:>10,}")
    rep.say(f"  lipschitz bound (upper estimate): {bound:.6g}")
    rep.say("  |det W| per block: " + ", ".join(f"{abs(d):.6g}" for d in dets))
    if config.get("preset") == "paper" or config.get("width") == 256:
        rep.say(f"  reference totals (published config, not an exact-match claim): "
                f"generator {REFERENCE_GEN_COUNT:,}, total {REFERENCE_TOTAL_COUNT:,}")
    rep.summary = {"command": "info", "generator_params": g_count,
                   "discriminator_params": d_count, "total_params": g_count + d_count,
                   "blocks": len(gen.blocks), "levels": gen.levels, "width": gen.width,
                   "lipschitz_bound": bound, "mixing_abs_dets": [abs(d) for d in dets]}
    return 0


def cmd_verify(args, rep: Reporter) -> int:
    runs = []
    if args.checkpoint:
        _, _, gen, _ = _load_generator(args.checkpoint)
        runs.append(("checkpoint", gen))
    else:
        for k in range(args.random):
            gen = Generator.create(blocks=2, levels=2, width=8, seed=args.seed + k,
                                   w_init="orthogonal")
            gen.randomize(np.random.default_rng(args.seed + 1000 + k), scale=0.1)
            gen.refresh_mixing()
            runs.append((f"random_{k}", gen))

    all_ok = True
    results = []
    for label, gen in runs:
        for res in run_battery(gen, seed=args.seed):
            status = "PASS" if res.passed else "FAIL"
            rep.say(f"[{status}] {label}/{res.name}: {res.detail}")
            results.append({"run": label, "check": res.name, "passed": res.passed,
                            "detail": res.detail})
            all_ok &= res.passed
    rep.summary = {"command": "verify", "ok": all_ok, "checks": results}
    rep.say("verification " + ("passed" if all_ok else "FAILED"))
    return 0 if all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfcgan",
        description="Unsupervised low-dose CT denoising with an invertible generator")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_opts=True):
        p.add_argument("--json", action="store_true", help="machine-readable summary on stdout")
        if config_opts:
            p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
            p.add_argument("--config", help="JSON config file overlaying the preset")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a single config key")
            p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("gen-data", help="simulate an unpaired CT dataset")
    add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the generator/discriminator pair")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (
            ("denoise", cmd_denoise, "map low-dose images to standard-dose"),
            ("synthesize-noise", cmd_synthesize,
             "map standard-dose images to low-dose via the analytic inverse")):
        p = sub.add_parser(name, help=help_text)
        add_common(p, config_opts=False)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--input", required=True, help=".ntsr file or directory")
        p.add_argument("--out", required=True)
        p.add_argument("--precision", choices=("f64", "f32"), default="f64")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="PSNR/SSIM report over the paired eval split")
    add_common(p, config_opts=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--hu", action="store_true", help="report in HU units")
    p.add_argument("--precision", choices=("f64", "f32"), default="f64")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", help="parameter counts and invertibility diagnostics")
    add_common(p)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("verify", help="run the invariant battery")
    add_common(p, config_opts=False)
    p.add_argument("--checkpoint")
    p.add_argument("--random", type=int, default=1,
                   help="number of random generators to verify (when no checkpoint)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    rep = Reporter(args.json)
    try:
        code = args.func(args, rep)
    except (OSError, ValueError, KeyError, CheckpointError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rep.finish()
    return code


if __name__ == "__main__":
    sys.exit(main())
