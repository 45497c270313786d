"""Command-line interface.

Subcommands: synth-noise, train-single, train-dataset, denoise, inpaint,
eval, gradcheck, flops. File-producing commands take --out and write their
outputs plus a manifest.json into a fresh run directory (existing directories
fail unless --suffix is given). Bad flags exit 2 (argparse); runtime failures
print a message and exit 1.
"""

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, backend_name
from .blindspot import sample_drop_inpaint
from .checkpoint import load_checkpoint
from .engine.rng import EVAL_STREAM, SAMPLE_STREAM, child_rng, make_rng
from .imageio import list_images, load_image, save_image
from .layers import LAYER_KINDS, layer_flops
from .manifest import config_to_dict, resolve_run_dir, train_config_from_json, write_manifest
from .metrics import QualityReport, psnr, ssim
from .noise import NoiseSpec, corrupt
from .training import (TrainConfig, desk_config, infer_averaged, paper_config,
                       scheme_sampler, train_dataset, train_single)
from .unet import NetConfig
from .gradcheck import run_suite


def _write_csv(path, rows):
    with open(path, "w", newline="") as f:
        csv.writer(f).writerows(rows)


def _input_images(path) -> list:
    path = Path(path)
    if path.is_dir():
        images = list_images(path)
        if not images:
            raise FileNotFoundError(f"no .png/.pgm images in {path}")
        return images
    return [path]


def _load_train_config(args, scheme: str, in_channels: int) -> TrainConfig:
    if args.config:
        cfg = train_config_from_json(Path(args.config).read_text())
        if cfg.scheme != scheme:
            raise ValueError(f"config scheme {cfg.scheme!r} does not match subcommand ({scheme})")
        if cfg.net.in_channels != in_channels:
            raise ValueError(f"config expects {cfg.net.in_channels} channels, "
                             f"input has {in_channels}")
    else:
        make = paper_config if getattr(args, "paper_scale", False) else desk_config
        cfg = make(scheme, in_channels=in_channels)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "steps", None) is not None:
        cfg.steps = args.steps
    if getattr(args, "conv_kind", None):
        cfg.net.conv_kind = args.conv_kind
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth_noise(args):
    run_dir = resolve_run_dir(args.out, "suffix" if args.suffix else "fail")
    spec = (NoiseSpec(kind="gauss_range", sigma_lo=args.sigma_range[0],
                      sigma_hi=args.sigma_range[1])
            if args.sigma_range else NoiseSpec(kind="gauss_fixed", sigma=args.sigma))
    spec.validate()
    rng = make_rng(args.seed)
    inputs = _input_images(args.input)
    outputs = []
    for src in inputs:
        noisy = corrupt(load_image(src), spec, rng)
        dst = run_dir / src.name
        save_image(noisy, dst)
        outputs.append(dst)
    write_manifest(run_dir, "synth-noise", dataclasses.asdict(spec), args.seed,
                   inputs, outputs)
    print(f"wrote {len(outputs)} noisy images to {run_dir}")
    return 0


def cmd_train_single(args):
    run_dir = resolve_run_dir(args.out, "suffix" if args.suffix else "fail")
    noisy = load_image(args.input)
    cfg = _load_train_config(args, "s2s_single", noisy.shape[1])
    ckpt = run_dir / "model.ckpt"
    log_path = run_dir / "train_log.csv"
    result = train_single(noisy, cfg, resume_from=args.resume,
                          log_path=log_path, checkpoint_path=ckpt)
    denoised = infer_averaged(result.net, noisy, cfg.eval_passes,
                              child_rng(cfg.seed, EVAL_STREAM),
                              sampler=scheme_sampler(cfg.scheme, cfg.mask_scheme))
    out_img = run_dir / f"denoised{Path(args.input).suffix}"
    save_image(denoised, out_img)
    write_manifest(run_dir, "train-single", config_to_dict(cfg), cfg.seed,
                   [Path(args.input)], [ckpt, log_path, out_img],
                   metrics={"final_loss": result.log_rows[-1][1] if result.log_rows else None})
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_train_dataset(args):
    run_dir = resolve_run_dir(args.out, "suffix" if args.suffix else "fail")
    paths = _input_images(args.input)
    images = [load_image(p) for p in paths]
    cfg = _load_train_config(args, "n2v_dataset", images[0].shape[1])
    noise = NoiseSpec(sigma=args.sigma) if args.sigma else None
    ckpt = run_dir / "model.ckpt"
    log_path = run_dir / "train_log.csv"
    result = train_dataset(images, cfg, noise, resume_from=args.resume,
                           log_path=log_path, checkpoint_path=ckpt)
    write_manifest(run_dir, "train-dataset", config_to_dict(cfg), cfg.seed,
                   paths, [ckpt, log_path],
                   metrics={"final_loss": result.log_rows[-1][1] if result.log_rows else None})
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_denoise(args):
    run_dir = resolve_run_dir(args.out, "suffix" if args.suffix else "fail")
    state = load_checkpoint(args.checkpoint)
    noisy_paths = _input_images(args.input)
    clean_paths = _input_images(args.clean) if args.clean else None
    if clean_paths and len(clean_paths) != len(noisy_paths):
        raise ValueError("number of clean reference images must match noisy inputs")
    seed = args.seed if args.seed is not None else state.seed
    rng = child_rng(seed, EVAL_STREAM)
    sampler = scheme_sampler(state.scheme, state.mask_scheme)
    report = QualityReport()
    outputs = []
    for i, src in enumerate(noisy_paths):
        noisy = load_image(src)
        out = infer_averaged(state.net, noisy, args.passes, rng, sampler=sampler)
        dst = run_dir / src.name
        save_image(out, dst)
        outputs.append(dst)
        if clean_paths:
            clean = load_image(clean_paths[i])
            report.add(src.stem, psnr(out, clean), ssim(out, clean))
    metrics = {}
    if clean_paths:
        csv_path = run_dir / "quality.csv"
        _write_csv(csv_path, report.to_csv_rows())
        outputs.append(csv_path)
        metrics = {"mean_psnr": report.mean_psnr, "mean_ssim": report.mean_ssim}
        print(f"mean PSNR {report.mean_psnr:.2f} dB, mean SSIM {report.mean_ssim:.4f}")
    write_manifest(run_dir, "denoise", {"passes": args.passes, "checkpoint": args.checkpoint},
                   seed, noisy_paths + (clean_paths or []), outputs, metrics=metrics)
    return 0


def cmd_inpaint(args):
    run_dir = resolve_run_dir(args.out, "suffix" if args.suffix else "fail")
    clean = load_image(args.input)
    cfg = _load_train_config(args, "inpaint_single", clean.shape[1])
    cfg.mask_scheme.kind = "drop_inpaint"
    cfg.mask_scheme.rate = args.drop_ratio
    cfg.validate()

    # the trainer draws the identical corruption from (seed, SAMPLE_STREAM)
    preview = sample_drop_inpaint(clean, args.drop_ratio, child_rng(cfg.seed, SAMPLE_STREAM))
    corrupted_path = run_dir / f"corrupted{Path(args.input).suffix}"
    save_image(preview.manipulated, corrupted_path)
    in_psnr = psnr(preview.manipulated, clean)
    in_ssim = ssim(preview.manipulated, clean)
    print(f"corrupted input: PSNR {in_psnr:.2f} dB, SSIM {in_ssim:.4f} "
          f"({args.drop_ratio:.0%} dropped)")

    ckpt = run_dir / "model.ckpt"
    log_path = run_dir / "train_log.csv"
    result = train_single(clean, cfg, log_path=log_path, checkpoint_path=ckpt)
    restored = infer_averaged(result.net, preview.manipulated, cfg.eval_passes,
                              child_rng(cfg.seed, EVAL_STREAM),
                              mask=preview.guide_mask)
    out_img = run_dir / f"inpainted{Path(args.input).suffix}"
    save_image(restored, out_img)
    out_psnr = psnr(restored, clean)
    out_ssim = ssim(restored, clean)
    print(f"inpainted: PSNR {out_psnr:.2f} dB, SSIM {out_ssim:.4f}")
    metrics = {"input_psnr": in_psnr, "input_ssim": in_ssim,
               "output_psnr": out_psnr, "output_ssim": out_ssim}
    _write_csv(run_dir / "metrics.csv",
               [("stage", "psnr", "ssim"),
                ("corrupted", f"{in_psnr:.4f}", f"{in_ssim:.6f}"),
                ("inpainted", f"{out_psnr:.4f}", f"{out_ssim:.6f}")])
    write_manifest(run_dir, "inpaint", config_to_dict(cfg), cfg.seed,
                   [Path(args.input)],
                   [corrupted_path, ckpt, log_path, out_img, run_dir / "metrics.csv"],
                   metrics=metrics)
    return 0


def cmd_eval(args):
    run_dir = resolve_run_dir(args.out, "suffix" if args.suffix else "fail")
    pred = _input_images(args.pred)
    ref = _input_images(args.ref)
    if len(pred) != len(ref):
        raise ValueError(f"{len(pred)} predictions vs {len(ref)} references")
    report = QualityReport()
    for p, r in zip(pred, ref):
        a, b = load_image(p), load_image(r)
        report.add(p.stem, psnr(a, b), ssim(a, b))
    csv_path = run_dir / "quality.csv"
    _write_csv(csv_path, report.to_csv_rows())
    write_manifest(run_dir, "eval", {}, 0, pred + ref, [csv_path],
                   metrics={"mean_psnr": report.mean_psnr, "mean_ssim": report.mean_ssim})
    print(f"mean PSNR {report.mean_psnr:.2f} dB, mean SSIM {report.mean_ssim:.4f}")
    return 0


def cmd_gradcheck(args):
    results, elapsed = run_suite(layer_configs=args.configs, seed=args.seed or 0)
    failures = 0
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        failures += not r.passed
        print(f"[{mark}] {r.name}: max rel err {r.max_rel_err:.3e} (tol {r.tolerance:g})")
    print(f"{len(results)} checks, {failures} failures, {elapsed:.1f}s "
          f"(backend: {backend_name()})")
    return 1 if failures else 0


def cmd_flops(args):
    cfg = NetConfig(in_channels=args.in_channels, depth=args.depth,
                    enc_channels=args.enc, dec_channels=args.dec,
                    conv_kind=args.kind, kernel=3)
    cfg.validate()
    h = w = args.size
    print(f"encoder mask-conv costs at {h}x{w} (MMACs, image/mask/elementwise/total):")
    rows = []
    c_in = cfg.in_channels
    for level in range(cfg.depth):
        for j, ci in enumerate((c_in, cfg.enc_channels)):
            f = layer_flops(cfg.conv_kind, ci, cfg.enc_channels, 3, h, w)
            rows.append((f"enc{level}{'ab'[j]}", ci, cfg.enc_channels, h, f))
        c_in = cfg.enc_channels
        h, w = h // 2, w // 2
    f = layer_flops(cfg.conv_kind, cfg.enc_channels, cfg.enc_channels, 3, h, w)
    rows.append(("bottleneck", cfg.enc_channels, cfg.enc_channels, h, f))
    total = 0
    for name, ci, co, res, f in rows:
        total += f.total
        print(f"  {name:<10} {ci:>3}->{co:<3} @{res:>3}px  "
              f"{f.image_conv/1e6:10.2f} {f.mask_conv/1e6:10.2f} "
              f"{f.elementwise/1e6:10.2f} {f.total/1e6:12.2f}")
    print(f"  encoder total: {total/1e9:.3f} GMAC\n")
    print(f"all four kinds, one {args.enc}->{args.enc} layer at {args.size}x{args.size}:")
    ranked = sorted(LAYER_KINDS[1:],  # skip vanilla in the comparison
                    key=lambda kind: layer_flops(kind, args.enc, args.enc, 3,
                                                 args.size, args.size).total)
    for kind in ranked:
        f = layer_flops(kind, args.enc, args.enc, 3, args.size, args.size)
        print(f"  {kind:<6} {f.total/1e9:8.4f} GMAC")
    return 0


# ---------------------------------------------------------------------------

def _add_common_out(p):
    p.add_argument("--out", required=True, help="run output directory (must not exist)")
    p.add_argument("--suffix", action="store_true",
                   help="if --out exists, create a numbered sibling instead of failing")


def _add_train_flags(p):
    p.add_argument("--config", help="TrainConfig JSON (strict schema)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, help="override step count")
    p.add_argument("--conv-kind", choices=LAYER_KINDS, default=None,
                   help="override encoder conv kind")
    p.add_argument("--paper-scale", action="store_true",
                   help="full-scale defaults instead of desk-scale")
    p.add_argument("--resume", help="checkpoint to resume from")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mgrdenoise",
                                 description="Blind-spot self-supervised denoising with "
                                             "mask-guided residual convolutions")
    ap.add_argument("--version", action="version", version=f"mgrdenoise {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-noise", help="corrupt clean images with Gaussian noise")
    p.add_argument("--input", required=True, help="clean image file or directory")
    _add_common_out(p)
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--sigma-range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_noise)

    p = sub.add_parser("train-single", help="train on one noisy image (Self2Self scheme)")
    p.add_argument("--input", required=True, help="noisy image")
    _add_common_out(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_single)

    p = sub.add_parser("train-dataset", help="train on an image directory (Noise2Void scheme)")
    p.add_argument("--input", required=True, help="directory of (noisy) training images")
    _add_common_out(p)
    _add_train_flags(p)
    p.add_argument("--sigma", type=float, default=None,
                   help="corrupt clean inputs on the fly with this sigma")
    p.set_defaults(func=cmd_train_dataset)

    p = sub.add_parser("denoise", help="run dropout-averaged inference from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="noisy image file or directory")
    _add_common_out(p)
    p.add_argument("--passes", type=int, default=100)
    p.add_argument("--clean", help="clean reference file or directory (enables quality CSV)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("inpaint", help="drop pixels from a clean image, train, restore")
    p.add_argument("--input", required=True, help="clean image")
    _add_common_out(p)
    p.add_argument("--drop-ratio", type=float, required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("eval", help="PSNR/SSIM of predictions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    _add_common_out(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the 64-bit finite-difference gradient suite")
    p.add_argument("--configs", type=int, default=20, help="random layer configurations")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("flops", help="per-layer MAC table for a network config")
    p.add_argument("--in-channels", type=int, default=3)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--enc", type=int, default=48)
    p.add_argument("--dec", type=int, default=96)
    p.add_argument("--kind", choices=LAYER_KINDS, default="mgr")
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_flops)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as e:  # runtime failure contract: message + exit 1
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
