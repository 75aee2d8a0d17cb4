"""Run-level helpers shared by the CLI and the test-suite.

Everything here is a deterministic function of a :class:`RunConfig`: the
dataset splits, training, held-out evaluation and the ablation variants.
"""
from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .denoiser import MHSA, DenoiserConfig, fhd_forward, fld_forward
from .frequency import decompose
from .geometry import fbp
from .metrics import evaluate
from .nn import ParameterStore
from .recon import Denoiser, network_denoiser, reconstruct
from .training import TrainingPair, TrainState, make_dataset, train

SPLITS = {"train": 0, "validation": 1, "test": 2}
DOSE_LEVELS = {"1e4": 1e4, "5e4": 5e4, "1e5": 1e5}

# (axis, label) -> overrides applied to the network section
ABLATIONS: dict[str, list[tuple[str, dict]]] = {
    "modules": [("FFD", {"use_fhd": False, "use_fld": False}),
                ("FFD+FLD", {"use_fhd": False}),
                ("FFD+FLD+FHD", {})],
    "attention": [("SSLA-GA", {}), ("GA", {"all_global": True})],
    "fusion": [("LDF", {}), ("L+H", {"fusion": "sum"})],
}


def split_seed(seed: int, split: str) -> int:
    return int(np.random.SeedSequence([seed, SPLITS[split]]).generate_state(1)[0])


def split_size(cfg: RunConfig, split: str) -> int:
    return {"train": cfg.data.train_pairs, "validation": cfg.data.validation_pairs,
            "test": cfg.data.test_phantoms}[split]


def dataset(cfg: RunConfig, split: str, photon_count: float | None = None,
            n: int | None = None) -> list[TrainingPair]:
    i0 = cfg.dose.photon_count if photon_count is None else photon_count
    return make_dataset(cfg.geometry, split_size(cfg, split) if n is None else n,
                        split_seed(cfg.seed, split), i0, cfg.data.attenuation,
                        cfg.dose.electronic_sigma, cfg.data.phantom)


def train_model(cfg: RunConfig, state: TrainState | None = None, **kw) -> TrainState:
    pairs = dataset(cfg, "train")
    return train(pairs, cfg.train_config(), cfg.denoiser(), cfg.schedule_obj(),
                 state=state, **kw)


def evaluate_pairs(cfg: RunConfig, denoiser: Denoiser, pairs: Sequence[TrainingPair],
                   photon_count: float, mode: str | None = None,
                   results: list | None = None) -> list[dict]:
    """Per-pair metrics for the full pipeline and for plain FBP of the noisy data.

    The reference is FBP of the noiseless sinogram with the same filter.
    ``results``, when given, receives each ``(image, report)``.
    """
    pwls = cfg.pwls if mode is None else dataclasses.replace(cfg.pwls, mode=mode)
    window = cfg.recon.fbp_window
    rows = []
    for i, pair in enumerate(pairs):
        ref = fbp(pair.x0, cfg.geometry, window)
        img, rep = reconstruct(pair.xT, cfg.geometry, denoiser, cfg.schedule_obj(), pwls,
                             cfg.tv, photon_count, renoise=cfg.recon.renoise,
                             fbp_window=window, reference=ref)
        if results is not None:
            results.append((img, rep))
        base = evaluate(fbp(pair.xT, cfg.geometry, window), ref)
        rows.append({"index": i, "psnr": rep.psnr, "ssim": rep.ssim, "mse": rep.mse,
                     "fbp_psnr": base["psnr"], "fbp_ssim": base["ssim"],
                     "fbp_mse": base["mse"]})
    return rows


def mean_row(rows: Sequence[dict]) -> dict:
    keys = [k for k in rows[0] if k != "index"]
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


def variant(cfg: RunConfig, overrides: dict) -> RunConfig:
    net_over = dict(overrides)
    if net_over.pop("all_global", False):
        n = len(cfg.network.fhd.module_layout)
        fhd = dataclasses.replace(cfg.network.fhd, module_layout=(MHSA,) * n)
        net_over["fhd"] = fhd
    return dataclasses.replace(cfg, network=dataclasses.replace(cfg.network, **net_over))


def sum_fusion_denoiser(params: ParameterStore, cfg: DenoiserConfig) -> Denoiser:
    """High and low branch outputs added, no learned fusion."""
    def run(x_t: np.ndarray, t: int) -> np.ndarray:
        split = decompose(x_t, cfg.sigma)
        s = cfg.residual_scale
        return (fhd_forward(split.high, t, params, cfg.fhd, s).data
                + fld_forward(split.low, t, params, cfg.unet, s).data)
    return run


def run_ablation(cfg: RunConfig, axes: Sequence[str], photon_count: float,
                 params: ParameterStore | None = None,
                 log: Callable[[str], None] | None = None) -> list[dict]:
    """One row per (axis, variant) with mean held-out metrics.

    With ``params`` every variant reuses those weights; otherwise each
    variant is trained from scratch under ``cfg``.
    """
    pairs = dataset(cfg, "test", photon_count)
    trained: dict[str, ParameterStore] = {}
    rows = []
    for axis in axes:
        for label, overrides in ABLATIONS[axis]:
            vcfg = variant(cfg, overrides)
            den_cfg = vcfg.denoiser()
            key = repr(den_cfg)
            if params is not None:
                p = params
            elif key in trained:
                p = trained[key]
            else:
                if log:
                    log(f"training variant {axis}/{label}")
                p = trained.setdefault(key, train_model(vcfg).params)
            m = mean_row(evaluate_pairs(vcfg, network_denoiser(p, den_cfg), pairs,
                                        photon_count))
            rows.append({"axis": axis, "variant": label, **m})
    return rows

