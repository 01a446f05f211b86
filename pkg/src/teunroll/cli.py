"""Experiment runner: phantom/mask generation, reconstruction, training and
evaluation, all driven by an INI config (see config.SCHEMA for defaults).

Subcommands: phantom | mask | recon | train | eval.
Exit codes: 0 ok, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import ktn, metrics
from .config import ConfigError, echo_config, load_config
from .nn import TrainableEngine, save_checkpoint, load_checkpoint, train
from .nn.training import TrainingError
from .pngout import write_png
from .prox import identity_prox, soft_threshold_prox, tikhonov_prox
from .signal_model import (
    ComplexImage,
    CoilSensitivities,
    EncodingOperator,
    KSpaceData,
    add_noise,
    make_equispaced_mask,
    make_phantom,
    make_random_mask,
    make_smooth_sensitivities,
)
from .unroll import ScalarSchedule, UnrollConfig, run_unrolled
from .vamp import VampConfig, run_vamp

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


# -- dataset helpers ---------------------------------------------------------

def _load_dataset(dirpath):
    files = sorted(glob.glob(os.path.join(dirpath, "img_*.ktn")))
    if not files:
        raise ConfigError(f"data.dir: no img_*.ktn files in {dirpath}")
    sens_path = os.path.join(dirpath, "sens.ktn")
    if not os.path.isfile(sens_path):
        raise ConfigError(f"data.dir: missing sens.ktn in {dirpath}")
    images = [ComplexImage(ktn.read_ktn(f).astype(np.complex128)) for f in files]
    sens = CoilSensitivities(ktn.read_ktn(sens_path).astype(np.complex128))
    return images, sens


def _build_mask(cfg, shape):
    mask_cfg = cfg["mask"]
    rows, cols = shape
    if mask_cfg["kind"] == "equispaced":
        return make_equispaced_mask(rows, cols, mask_cfg["accel"], mask_cfg["acs"])
    return make_random_mask(rows, cols, mask_cfg["accel"], mask_cfg["acs"], mask_cfg["seed"])


def _measure(E, image, cfg, index):
    sigma = cfg["data"]["noise_sigma"]
    seed = cfg["data"]["noise_seed"] + index
    return add_noise(E.forward(image), sigma, seed, mask=E.mask)


def _analytic_prox(cfg):
    model = cfg["model"]
    if model["prox"] == "identity":
        return identity_prox()
    if model["prox"] == "soft_threshold":
        return soft_threshold_prox(model["theta"])
    return tikhonov_prox(model["gamma"])


def _build_engine(cfg):
    model = cfg["model"]
    un = cfg["unroll"]
    if model["prox"] == "resnet":
        kwargs = {"blocks": model["blocks"], "channels": model["channels"]}
    else:
        kwargs = {"base_channels": model["base_channels"], "res_blocks": model["res_blocks"]}
    return TrainableEngine(
        un["algorithm"],
        T=un["t"],
        cg_iters=un["cg_iters"],
        sharing=un["sharing"],
        arch=model["prox"],
        seed=model["net_seed"],
        mu_init=un["mu"],
        rho_init=un["rho"],
        lam_init=un["lam"],
        **kwargs,
    )


def _load_engine(cfg, checkpoint):
    engine = _build_engine(cfg)
    if checkpoint:
        try:
            engine.load_state(load_checkpoint(checkpoint))
        except (KeyError, ValueError, OSError) as exc:
            raise ConfigError(f"model.checkpoint: {exc}") from None
    return engine


def _reconstruct(cfg, E, y, reference=None):
    """Run the configured algorithm on one slice; returns (image, diags)."""
    un = cfg["unroll"]
    learned = cfg["model"]["prox"] in ("resnet", "unet")
    if un["algorithm"] == "vamp":
        vcfg = VampConfig(
            max_iters=un["max_iters"],
            damping=un["damping"],
            trace_probes=un["trace_probes"],
            mu_floor=un["mu_floor"],
            cg_iters=max(un["cg_iters"], 50),
        )
        if learned:
            p = _load_engine(cfg, cfg["model"]["checkpoint"]).networks[0]
        else:
            p = _analytic_prox(cfg)
        x, diags = run_vamp(E, y, p, vcfg, reference=reference)
        return ComplexImage(x), diags
    ucfg = UnrollConfig(un["algorithm"], T=un["t"], cg_iters=un["cg_iters"],
                        sharing=un["sharing"])
    if learned:
        engine = _load_engine(cfg, cfg["model"]["checkpoint"])
        bank = engine.networks
        schedules = engine.schedules()
    else:
        p = _analytic_prox(cfg)
        bank = [p] * (ucfg.T if un["sharing"] == "unshared" else 1)
        schedules = {
            "mu": ScalarSchedule.constant(un["mu"], ucfg.T),
            "rho": ScalarSchedule.constant(un["rho"], ucfg.T),
            "lam": ScalarSchedule.constant(un["lam"], ucfg.T),
        }
    return run_unrolled(ucfg, E, y, schedules, bank, reference=reference)


def _metric_row(reference, test, crop):
    ref = np.abs(reference.data)
    tst = np.abs(test.data)
    if crop > 0:
        ref = _center_crop(ref, crop)
        tst = _center_crop(tst, crop)
    return (
        metrics.psnr(ref, tst),
        metrics.ssim(ref, tst) if min(ref.shape) >= 11 else float("nan"),
        metrics.nmse(ref, tst),
    )


def _center_crop(arr, size):
    h, w = arr.shape
    size = min(size, h, w)
    top = (h - size) // 2
    left = (w - size) // 2
    return arr[top : top + size, left : left + size]


# -- subcommands ---------------------------------------------------------

def _run_seed(args, fallback=0):
    if getattr(args, "sub_seed", None) is not None:
        return args.sub_seed
    return args.seed if args.seed is not None else fallback


def cmd_phantom(args):
    seed = _run_seed(args)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        img = make_phantom(args.size, args.size, args.ellipses, seed=seed + i)
        ktn.write_ktn(os.path.join(args.out, f"img_{i:04d}.ktn"), img.data)
    sens = make_smooth_sensitivities(args.size, args.size, args.coils, seed=seed)
    ktn.write_ktn(os.path.join(args.out, "sens.ktn"), sens.maps)
    if args.verbose:
        print(f"wrote {args.count} phantom(s) + sens.ktn to {args.out}")
    return EXIT_OK


def cmd_mask(args):
    seed = _run_seed(args)
    if args.kind == "equispaced":
        mask = make_equispaced_mask(args.rows, args.cols, args.accel, args.acs)
    else:
        mask = make_random_mask(args.rows, args.cols, args.accel, args.acs, seed)
    ktn.write_ktn(args.out, mask.pattern.astype(np.float32))
    if args.verbose:
        print(f"wrote {mask.pattern.shape} mask ({mask.sampled_columns().size} columns) to {args.out}")
    return EXIT_OK


def cmd_recon(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["data"]["noise_seed"] = args.seed
    images, sens = _load_dataset(cfg["data"]["dir"])
    index = cfg["data"]["index"]
    if not 0 <= index < len(images):
        raise ConfigError(f"data.index: {index} out of range (0..{len(images) - 1})")
    truth = images[index]
    mask = _build_mask(cfg, truth.data.shape)
    E = EncodingOperator(mask, sens)
    y = _measure(E, truth, cfg, index)
    recon, diags = _reconstruct(cfg, E, y, reference=truth)
    if not np.all(np.isfinite(recon.data)):
        raise FloatingPointError("reconstruction contains non-finite values")

    out = cfg["unroll"]["out"]
    os.makedirs(out, exist_ok=True)
    ktn.write_ktn(os.path.join(out, "recon.ktn"), recon.data)
    write_png(os.path.join(out, "recon.png"), np.abs(recon.data))
    with open(os.path.join(out, "diagnostics.csv"), "w") as fh:
        fh.write(diags.to_csv())
    zf = E.adjoint(y)
    with open(os.path.join(out, "metrics.csv"), "w") as fh:
        crop = cfg["eval"]["crop"]
        fh.write("which,psnr_db,ssim,nmse\n")
        for which, img in (("recon", recon), ("zero_filled", zf)):
            p, s, n = _metric_row(truth, img, crop)
            fh.write(f"{which},{p!r},{s!r},{n!r}\n")
    echo_config(cfg, os.path.join(out, "config.echo.ini"))
    if args.verbose:
        p, _, n = _metric_row(truth, recon, cfg["eval"]["crop"])
        print(f"recon written to {out} (psnr {p:.2f} dB, nmse {n:.3e})")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    un = cfg["unroll"]
    if un["algorithm"] == "vamp":
        raise ConfigError("unroll.algorithm: vamp has no trainable parameters")
    if cfg["model"]["prox"] not in ("resnet", "unet"):
        raise ConfigError("model.prox: training needs a network prox (resnet or unet)")
    images, sens = _load_dataset(cfg["data"]["dir"])
    mask = _build_mask(cfg, images[0].data.shape)
    E = EncodingOperator(mask, sens)
    dataset = [(E, _measure(E, img, cfg, i), img) for i, img in enumerate(images)]
    engine = _build_engine(cfg)
    if cfg["model"]["checkpoint"]:
        engine = _load_engine(cfg, cfg["model"]["checkpoint"])
    curve = train(engine, dataset, cfg["train"]["epochs"], cfg["train"]["lr"],
                  seed=cfg["train"]["seed"])
    out = cfg["train"]["out"]
    os.makedirs(out, exist_ok=True)
    save_checkpoint(os.path.join(out, "checkpoint"), engine.parameters())
    with open(os.path.join(out, "loss.csv"), "w") as fh:
        fh.write("epoch,train_mse\n")
        for i, v in enumerate(curve):
            fh.write(f"{i},{v!r}\n")
    echo_config(cfg, os.path.join(out, "config.echo.ini"))
    if args.verbose:
        tail = f"final loss {curve[-1]:.4e}" if curve else "no epochs run"
        print(f"checkpoint written to {out}/checkpoint ({tail})")
    return EXIT_OK


def cmd_eval(args):
    cfg = load_config(args.config)
    if args.checkpoint:
        cfg["model"]["checkpoint"] = os.path.abspath(args.checkpoint)
    images, sens = _load_dataset(cfg["data"]["dir"])
    mask = _build_mask(cfg, images[0].data.shape)
    E = EncodingOperator(mask, sens)
    crop = cfg["eval"]["crop"]

    def one(i):
        truth = images[i]
        y = _measure(E, truth, cfg, i)
        recon, _ = _reconstruct(cfg, E, y)
        return _metric_row(truth, recon, crop)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(one, range(len(images))))
    else:
        rows = [one(i) for i in range(len(images))]

    out = cfg["eval"]["out"]
    os.makedirs(out, exist_ok=True)
    arr = np.array(rows, dtype=np.float64)
    csv_path = os.path.join(out, "metrics.csv")
    with open(csv_path, "w") as fh:
        fh.write("slice,psnr_db,ssim,nmse\n")
        for i, (p, s, n) in enumerate(rows):
            fh.write(f"{i},{p!r},{s!r},{n!r}\n")
        finite = np.isfinite(arr[:, 0])
        mean_psnr = float(np.mean(arr[finite, 0])) if finite.any() else float("inf")
        std_psnr = float(np.std(arr[finite, 0])) if finite.any() else 0.0
        fh.write(
            f"mean,{mean_psnr!r},{float(np.mean(arr[:, 1]))!r},{float(np.mean(arr[:, 2]))!r}\n"
        )
        fh.write(
            f"std,{std_psnr!r},{float(np.std(arr[:, 1]))!r},{float(np.std(arr[:, 2]))!r}\n"
        )
    echo_config(cfg, os.path.join(out, "config.echo.ini"))
    if args.verbose:
        print(f"metrics for {len(rows)} slice(s) written to {csv_path}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="teunroll",
        description="Time-embedded algorithm unrolling experiment runner.",
    )
    parser.add_argument("--seed", type=int, default=None, help="override run seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for eval")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate phantom images + coil maps")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--ellipses", type=int, default=6)
    p.add_argument("--seed", type=int, default=None, dest="sub_seed")
    p.set_defaults(fn=cmd_phantom)

    p = sub.add_parser("mask", help="generate a sampling mask")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--accel", type=int, default=4)
    p.add_argument("--acs", type=int, default=4)
    p.add_argument("--kind", choices=("equispaced", "random"), default="equispaced")
    p.add_argument("--seed", type=int, default=None, dest="sub_seed")
    p.set_defaults(fn=cmd_mask)

    p = sub.add_parser("recon", help="reconstruct one slice per the config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_recon)

    p = sub.add_parser("train", help="train an unrolled network end to end")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a config over a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
