"""Paired-sinogram dataset generation and the denoiser training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .denoiser import DenoiserConfig, denoise, init_params
from .diffusion import DiffusionSchedule, perturb, sample_step
from .geometry import DoseModel, FanGeometry, forward_project, make_phantom, simulate_low_dose
from .nn import AdamState, ParameterStore, Tensor

log = logging.getLogger(__name__)

LOSS_NORMS = ("l1", "l2")


@dataclass(frozen=True)
class TrainingPair:
    x0: np.ndarray
    xT: np.ndarray

    def __post_init__(self):
        if self.x0.shape != self.xT.shape:
            raise ValueError(f"pair shape mismatch {self.x0.shape} vs {self.xT.shape}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    iterations: int = 2000
    batch_size: int = 1
    loss: str = "l2"
    seed: int = 0
    checkpoint_interval: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in LOSS_NORMS:
            raise ValueError(f"loss must be one of {LOSS_NORMS}")
        if self.checkpoint_interval < 0:
            raise ValueError("checkpoint_interval must be >= 0")


@dataclass
class TrainState:
    """Everything needed to continue a run bit-exactly."""

    params: ParameterStore
    opt: AdamState
    iteration: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cursor: int = 0
    losses: list[float] = field(default_factory=list)

    def rng_state(self) -> dict:
        return {"bit_generator": self.rng.bit_generator.state,
                "order": [int(i) for i in self.order],
                "cursor": int(self.cursor)}

    def set_rng_state(self, state: dict) -> None:
        bg = getattr(np.random, state["bit_generator"]["bit_generator"])()
        bg.state = state["bit_generator"]
        self.rng = np.random.Generator(bg)
        self.order = np.asarray(state["order"], dtype=np.int64)
        self.cursor = int(state["cursor"])


# -- data ----------------------------------------------------------------------

def phantom_image(geom: FanGeometry, seed: int, attenuation: float,
                  kind: str = "random_ellipses") -> np.ndarray:
    """Phantom in attenuation per pixel length.

    ``attenuation`` is the linear attenuation (per geometry length unit) of
    a unit-intensity phantom pixel.
    """
    return make_phantom(kind, geom.image_size, seed) * (attenuation * geom.pixel_size)


def make_pair(geom: FanGeometry, image: np.ndarray, dose: DoseModel) -> TrainingPair:
    x0 = forward_project(image, geom)
    return TrainingPair(x0=x0, xT=simulate_low_dose(x0, dose))


def make_dataset(geom: FanGeometry, n: int, seed: int, photon_count: float,
                 attenuation: float, electronic_sigma: float = 0.0,
                 kind: str = "random_ellipses") -> list[TrainingPair]:
    """``n`` pairs from phantoms with per-index derived seeds.

    Noise seeds do not depend on ``photon_count``, so the same ``seed`` at
    two doses gives the same phantoms under common random numbers.
    """
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    seeds = np.random.SeedSequence(seed).generate_state(2 * n)
    pairs = []
    for i in range(n):
        img = phantom_image(geom, int(seeds[2 * i]), attenuation, kind)
        dose = DoseModel(photon_count, electronic_sigma, int(seeds[2 * i + 1]))
        pairs.append(make_pair(geom, img, dose))
    return pairs


# -- loss and step ---------------------------------------------------------------

def restoration_loss(pred: Tensor, target: np.ndarray, norm: str = "l2") -> Tensor:
    """Mean squared (``l2``) or mean absolute (``l1``) error."""
    pred = nn.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"loss shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    if norm == "l2":
        return nn.mean(nn.square(diff))
    if norm == "l1":
        return nn.mean(nn.tabs(diff))
    raise ValueError(f"unknown loss norm {norm!r}")


def _batch_gradients(batch: Sequence[tuple[TrainingPair, int]], params: ParameterStore,
                     den_cfg: DenoiserConfig, sched: DiffusionSchedule,
                     norm: str) -> tuple[list[np.ndarray], float]:
    tensors = params.tensors()
    total = [np.zeros_like(p.data) for p in tensors]
    loss_sum = 0.0
    for pair, t in batch:
        x_t = perturb(pair.x0, pair.xT, t, sched)
        loss = restoration_loss(denoise(x_t, t, params, den_cfg), pair.x0, norm)
        grads = nn.backward(loss, tensors)
        for acc, g in zip(total, grads):
            acc += g
        loss_sum += float(loss.data)
    n = len(batch)
    return [g / n for g in total], loss_sum / n


def train_step(pair: TrainingPair | Sequence[tuple[TrainingPair, int]], t: int | None,
               params: ParameterStore, opt: AdamState, cfg: TrainConfig,
               den_cfg: DenoiserConfig, sched: DiffusionSchedule) -> float:
    """One Adam update on ``pair`` perturbed to step ``t``; returns the loss.

    ``pair`` may also be a sequence of ``(pair, t)`` items whose gradients are
    averaged before the update.  ``params`` and ``opt`` are updated in place.
    """
    batch = [(pair, t)] if isinstance(pair, TrainingPair) else list(pair)
    grads, loss = _batch_gradients(batch, params, den_cfg, sched, cfg.loss)
    opt.lr = cfg.learning_rate
    params.set_arrays(nn.adam_step([p.data for p in params.tensors()], grads, opt))
    return loss


def new_state(den_cfg: DenoiserConfig, cfg: TrainConfig) -> TrainState:
    params = init_params(den_cfg, cfg.seed)
    return TrainState(params=params, opt=AdamState(lr=cfg.learning_rate),
                      rng=np.random.default_rng(cfg.seed))


def _next_index(state: TrainState, n: int) -> int:
    if state.cursor >= len(state.order):
        state.order = state.rng.permutation(n)
        state.cursor = 0
    i = int(state.order[state.cursor])
    state.cursor += 1
    return i


def train(dataset: Sequence[TrainingPair], cfg: TrainConfig, den_cfg: DenoiserConfig,
          sched: DiffusionSchedule, state: TrainState | None = None,
          on_checkpoint: Callable[[TrainState], None] | None = None,
          loss_csv: str | Path | None = None, until: int | None = None) -> TrainState:
    """Run (or continue) training up to ``until`` (default ``cfg.iterations``).

    Pairs are visited in reshuffled epochs; every item draws its own ``t``.
    ``on_checkpoint`` fires every ``cfg.checkpoint_interval`` iterations and
    at the end.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    state = state or new_state(den_cfg, cfg)
    stop = cfg.iterations if until is None else until
    writer = None
    fh = None
    if loss_csv is not None:
        path = Path(loss_csv)
        fresh = state.iteration == 0 or not path.exists()
        fh = open(path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["iteration", "loss"])
    try:
        while state.iteration < stop:
            batch = []
            for _ in range(cfg.batch_size):
                pair = dataset[_next_index(state, len(dataset))]
                batch.append((pair, sample_step(state.rng, sched.T)))
            loss = train_step(batch, None, state.params, state.opt, cfg, den_cfg, sched)
            state.iteration += 1
            state.losses.append(loss)
            if writer is not None:
                writer.writerow([state.iteration, repr(loss)])
            if state.iteration % 100 == 0:
                log.info("iteration %d loss %.6g", state.iteration, loss)
            if (on_checkpoint is not None and cfg.checkpoint_interval
                    and state.iteration % cfg.checkpoint_interval == 0):
                on_checkpoint(state)
    finally:
        if fh is not None:
            fh.close()
    if on_checkpoint is not None:
        on_checkpoint(state)
    return state


def validation_loss(dataset: Sequence[TrainingPair], params: ParameterStore,
                    den_cfg: DenoiserConfig, sched: DiffusionSchedule, t: int,
                    norm: str = "l2") -> tuple[float, float]:
    """Mean ``(network loss, identity-baseline loss)`` at step ``t``.

    The baseline predicts ``x_t`` itself.
    """
    net, base = [], []
    for pair in dataset:
        x_t = perturb(pair.x0, pair.xT, t, sched)
        net.append(float(restoration_loss(denoise(x_t, t, params, den_cfg), pair.x0, norm).data))
        base.append(float(restoration_loss(Tensor(x_t), pair.x0, norm).data))
    return float(np.mean(net)), float(np.mean(base))
