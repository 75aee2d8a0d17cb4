"""Command-line interface: ``fdct <subcommand> --config PATH [options]``.

Exit codes: 0 success, 2 configuration or validation error, 3 numeric error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt_io
from . import config as config_io
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig
from .experiments import (ABLATIONS, DOSE_LEVELS, dataset, evaluate_pairs, mean_row,
                          run_ablation, train_model)
from .frequency import decompose
from .io import TensorFileError, read_tensor, write_preview, write_tensor
from .metrics import evaluate
from .recon import NumericError, network_denoiser, reconstruct
from .training import validation_loss

log = logging.getLogger("fdct")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    """A missing or invalid command-line value; ``field`` names it."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# -- helpers -----------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _prepare(args) -> tuple[RunConfig, Path]:
    cfg = config_io.load(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "dose", None) not in (None, "custom"):
        cfg = dataclasses.replace(
            cfg, dose=dataclasses.replace(cfg.dose, photon_count=DOSE_LEVELS[args.dose]))
    if getattr(args, "mode", None):
        cfg = dataclasses.replace(cfg, pwls=dataclasses.replace(cfg.pwls, mode=args.mode))
    out = Path(args.out or cfg.paths.out)
    config_io.write_resolved(cfg, out)
    return cfg, out


def _architecture(cfg: RunConfig) -> dict:
    return ckpt_io.architecture_of(cfg.denoiser(), cfg.schedule.T, cfg.schedule.kind)


def _load_checkpoint(path: str, cfg: RunConfig) -> ckpt_io.Checkpoint:
    ck = ckpt_io.load(path)
    ckpt_io.check_architecture(ck, _architecture(cfg))
    return ck


def _checkpoint_path(args, cfg: RunConfig, required: bool) -> str | None:
    path = args.checkpoint or cfg.paths.checkpoint or None
    if required and not path:
        raise UsageError("checkpoint", "required (pass --checkpoint or set paths.checkpoint)")
    return path


# -- subcommands ---------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg, out = _prepare(args)
    splits = ["train", "validation", "test"] if args.split == "all" else [args.split]
    manifest = {"photon_count": cfg.dose.photon_count, "splits": {}}
    for split in splits:
        d = out / split
        d.mkdir(parents=True, exist_ok=True)
        pairs = dataset(cfg, split)
        for i, pair in enumerate(pairs):
            write_tensor(d / f"{i:04d}_clean.tns", pair.x0)
            write_tensor(d / f"{i:04d}_noisy.tns", pair.xT)
            if args.previews:
                write_preview(d / f"{i:04d}_noisy.png", pair.xT)
        manifest["splits"][split] = len(pairs)
        log.info("%s: %d pairs", split, len(pairs))
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {sum(manifest['splits'].values())} pairs to {out}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    cfg, out = _prepare(args)
    if args.input:
        x = read_tensor(args.input)
    else:
        x = dataset(cfg, "test", n=args.index + 1)[args.index].xT
    trip = decompose(x, cfg.sigma)
    for name, arr in (("low", trip.low), ("high", trip.high), ("full", trip.full)):
        write_tensor(out / f"{name}.tns", arr)
        write_preview(out / f"{name}.png", arr)
    summary = {"sigma": cfg.sigma,
               "energy": {k: float(np.sum(v ** 2)) for k, v in
                          (("low", trip.low), ("high", trip.high), ("full", trip.full))}}
    _write_json(out / "decompose.json", summary)
    print(f"wrote low/high/full components to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, out = _prepare(args)
    arch = _architecture(cfg)
    snapshot = config_io.resolved_dict(cfg)
    state = None
    if args.checkpoint:
        state = ckpt_io.to_state(_load_checkpoint(args.checkpoint, cfg), cfg.denoiser())
        log.info("resuming from iteration %d", state.iteration)
    target = out / "checkpoint.ckpt"

    def save(st):
        ckpt_io.save(ckpt_io.from_state(st, snapshot, arch), target)

    state = train_model(cfg, state=state, on_checkpoint=save,
                        loss_csv=out / "loss.csv", until=args.until)
    val = dataset(cfg, "validation")
    net, base = validation_loss(val, state.params, cfg.denoiser(), cfg.schedule_obj(),
                                cfg.schedule.T, cfg.training.loss)
    summary = {"iterations": state.iteration, "final_loss": state.losses[-1] if state.losses else None,
               "validation_loss_tT": net, "identity_baseline_tT": base,
               "beats_baseline": net < base}
    _write_json(out / "summary.json", summary)
    print(f"iteration {state.iteration}: validation loss {net:.6g} "
          f"(identity baseline {base:.6g}); checkpoint {target}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg, out = _prepare(args)
    path = _checkpoint_path(args, cfg, required=True)
    den_cfg = cfg.denoiser()
    params = ckpt_io.load_params(_load_checkpoint(path, cfg), den_cfg)
    denoiser = network_denoiser(params, den_cfg)
    i0 = cfg.dose.photon_count
    window = cfg.recon.fbp_window
    if args.input:
        data = read_tensor(args.input)
        ref = read_tensor(args.reference) if args.reference else None
        img, rep = reconstruct(data, cfg.geometry, denoiser, cfg.schedule_obj(), cfg.pwls,
                               cfg.tv, i0, is_image=args.input_kind == "image",
                               renoise=cfg.recon.renoise, fbp_window=window, reference=ref)
        write_tensor(out / "recon.tns", img)
        write_preview(out / "recon.png", img)
        _write_csv(out / "steps.csv", rep.steps or [{"t": 0, "fidelity_residual": 0.0, "tv": 0.0}])
        if ref is not None:
            _write_json(out / "metrics.json", rep.metrics())
            print(f"psnr {rep.psnr:.3f} dB  ssim {rep.ssim:.4f}  mse {rep.mse:.4g}")
        print(f"wrote {out / 'recon.tns'}")
        return EXIT_OK
    pairs = dataset(cfg, "test")
    results: list = []
    rows = evaluate_pairs(cfg, denoiser, pairs, i0, results=results)
    steps = []
    for i, (img, rep) in enumerate(results):
        write_tensor(out / f"{i:04d}_recon.tns", img)
        write_preview(out / f"{i:04d}_recon.png", img)
        steps += [{"index": i, **s} for s in rep.steps]
    _write_csv(out / "metrics.csv", rows)
    if steps:
        _write_csv(out / "steps.csv", steps)
    summary = {"photon_count": i0, "mean": mean_row(rows)}
    _write_json(out / "summary.json", summary)
    m = summary["mean"]
    print(f"I0={i0:g}: mean psnr {m['psnr']:.3f} dB vs fbp {m['fbp_psnr']:.3f} dB "
          f"over {len(rows)} phantoms")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _, out = _prepare(args)
    ref = read_tensor(args.reference)
    rows = []
    for p in args.images:
        m = evaluate(read_tensor(p), ref)
        rows.append({"image": p, **m})
    _write_csv(out / "metrics.csv", rows)
    for r in rows:
        print(f"{r['image']}: psnr {r['psnr']:.3f} dB  ssim {r['ssim']:.4f}  mse {r['mse']:.4g}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg, out = _prepare(args)
    axes = list(ABLATIONS) if args.axis == "all" else [args.axis]
    params = None
    path = _checkpoint_path(args, cfg, required=False)
    if path:
        params = ckpt_io.load_params(_load_checkpoint(path, cfg), cfg.denoiser())
    rows = run_ablation(cfg, axes, cfg.dose.photon_count, params=params, log=log.info)
    _write_csv(out / "ablation.csv", rows)
    _write_json(out / "ablation.json", rows)
    for r in rows:
        print(f"{r['axis']:>9} {r['variant']:<12} psnr {r['psnr']:.3f} dB  "
              f"ssim {r['ssim']:.4f}  (fbp {r['fbp_psnr']:.3f} dB)")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdct", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dose=False, mode=False, checkpoint=False):
        p.add_argument("--config", required=True, help="run config (YAML)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default: paths.out)")
        if dose:
            p.add_argument("--dose", choices=[*DOSE_LEVELS, "custom"],
                           help="incident photon count; custom keeps dose.photon_count")
        if mode:
            p.add_argument("--mode", choices=["corrected", "literal"], help="PWLS update form")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint file")
        return p

    p = common(sub.add_parser("simulate", help="phantoms to clean/noisy sinogram pairs"), dose=True)
    p.add_argument("--split", choices=["train", "validation", "test", "all"], default="all")
    p.add_argument("--previews", action="store_true", help="also write PNG previews")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("decompose", help="low/high/full frequency split"), dose=True)
    p.add_argument("--input", help="sinogram tensor file (default: a simulated test pair)")
    p.add_argument("--index", type=int, default=0, help="test pair to split without --input")
    p.set_defaults(func=cmd_decompose)

    p = common(sub.add_parser("train", help="train the denoiser"), dose=True, checkpoint=True)
    p.add_argument("--until", type=int, help="stop after this iteration")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("reconstruct", help="reverse diffusion + PWLS/TV + FBP"),
               dose=True, mode=True, checkpoint=True)
    p.add_argument("--input", help="tensor file (default: the simulated test split)")
    p.add_argument("--input-kind", choices=["sinogram", "image"], default="sinogram")
    p.add_argument("--reference", help="ground-truth image tensor for metrics")
    p.set_defaults(func=cmd_reconstruct)

    p = common(sub.add_parser("evaluate", help="PSNR/SSIM/MSE of images against a reference"))
    p.add_argument("--reference", required=True)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("ablate", help="module / attention / fusion ablations"),
               dose=True, mode=True, checkpoint=True)
    p.add_argument("--axis", choices=[*ABLATIONS, "all"], default="all")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericError, FloatingPointError) as exc:
        where = f" (t={exc.t})" if getattr(exc, "t", None) is not None else ""
        print(f"numeric error{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, UsageError, CheckpointError, TensorFileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
