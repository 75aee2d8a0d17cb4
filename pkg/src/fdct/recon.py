"""Reverse-diffusion reconstruction with PWLS and TV corrections, then FBP."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .denoiser import DenoiserConfig, denoise
from .diffusion import DiffusionSchedule, perturb
from .geometry import FanGeometry, fbp, forward_project
from .metrics import evaluate
from .nn import ParameterStore

PWLS_MODES = ("corrected", "literal")


class NumericError(FloatingPointError):
    """A non-finite intermediate during reconstruction."""

    def __init__(self, message: str, t: int | None = None):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class PwlsConfig:
    eta: float = 22000.0
    mu: float = 1e5
    mode: str = "corrected"
    prior_gradient: bool = False  # add mu * TV subgradient inside the update
    freeze_weights: bool = False  # weights from y instead of the current estimate

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("pwls.eta must be > 0")
        if not self.mu >= 0:
            raise ValueError("pwls.mu must be >= 0")
        if self.mode not in PWLS_MODES:
            raise ValueError(f"pwls.mode must be one of {PWLS_MODES}")


@dataclass(frozen=True)
class TvConfig:
    step: float = 0.05
    iterations: int = 2
    eps: float = 1e-3
    enabled: bool = True

    def __post_init__(self):
        if not self.step >= 0:
            raise ValueError("tv.step must be >= 0")
        if self.iterations < 1:
            raise ValueError("tv.iterations must be >= 1")
        if not self.eps > 0:
            raise ValueError("tv.eps must be > 0")


@dataclass
class ReconReport:
    psnr: float | None = None
    ssim: float | None = None
    mse: float | None = None
    steps: list[dict] = field(default_factory=list)

    def metrics(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "mse": self.mse}


# -- total variation -----------------------------------------------------------

def _forward_diffs(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # replicate boundary: the last difference along each axis is zero
    dh = np.zeros_like(x)
    dw = np.zeros_like(x)
    dh[:-1] = x[1:] - x[:-1]
    dw[:, :-1] = x[:, 1:] - x[:, :-1]
    return dh, dw


def tv_seminorm(x: np.ndarray, eps: float = 1e-3) -> float:
    """Smoothed isotropic TV: ``sum(sqrt(dh^2 + dw^2 + eps^2) - eps)``."""
    x = np.asarray(x, dtype=np.float64)
    dh, dw = _forward_diffs(x)
    return float(np.sum(np.sqrt(dh ** 2 + dw ** 2 + eps ** 2) - eps))


def tv_gradient(x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Gradient of :func:`tv_seminorm` with respect to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    dh, dw = _forward_diffs(x)
    mag = np.sqrt(dh ** 2 + dw ** 2 + eps ** 2)
    ph, pw = dh / mag, dw / mag
    g = -(ph + pw)
    g[1:] += ph[:-1]
    g[:, 1:] += pw[:, :-1]
    return g


_MAX_HALVINGS = 30


def tv_step(x: np.ndarray, cfg: TvConfig) -> np.ndarray:
    """Normalised gradient descent on the TV seminorm, ``cfg.iterations`` times.

    Each move has length ``cfg.step`` unless that would raise the seminorm,
    in which case it is halved until it does not (or dropped).
    """
    x = np.array(x, dtype=np.float64)
    for _ in range(cfg.iterations):
        g = tv_gradient(x, cfg.eps)
        norm = np.linalg.norm(g)
        if not norm > 0:
            continue
        current = tv_seminorm(x, cfg.eps)
        step = cfg.step
        for _ in range(_MAX_HALVINGS):
            cand = x - step * g / norm
            if tv_seminorm(cand, cfg.eps) <= current:
                x = cand
                break
            step *= 0.5
    return x


# -- PWLS ------------------------------------------------------------------------

def pwls_weights(x: np.ndarray, photon_count: float, eta: float) -> np.ndarray:
    """Inverse-variance weights ``I0 * exp(-x / eta)``."""
    if not (photon_count > 0 and eta > 0):
        raise ValueError("photon_count and eta must be > 0")
    return photon_count * np.exp(-np.asarray(x, dtype=np.float64) / eta)


def pwls_update(x_est: np.ndarray, y: np.ndarray, weights: np.ndarray, mu: float,
                prior_grad: np.ndarray | float = 0.0, mode: str = "corrected") -> np.ndarray:
    """One weighted data-consistency correction of ``x_est`` toward ``y``.

    ``corrected``: ``x + (W (y - x) - mu g) / (W + mu)``.
    ``literal``: ``(W (y - x) + mu g) / (W + mu)``.
    """
    x_est = np.asarray(x_est, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x_est.shape != y.shape or np.shape(weights) != y.shape:
        raise ValueError(f"pwls shape mismatch: {x_est.shape}, {y.shape}, "
                         f"{np.shape(weights)}")
    denom = weights + mu
    if mode == "corrected":
        if mu == 0:
            return y.copy()
        return x_est + (weights * (y - x_est) - mu * prior_grad) / denom
    if mode == "literal":
        return (weights * (y - x_est) + mu * prior_grad) / denom
    raise ValueError(f"unknown pwls mode {mode!r}")


# -- pipeline ------------------------------------------------------------------

Denoiser = Callable[[np.ndarray, int], np.ndarray]


def network_denoiser(params: ParameterStore, cfg: DenoiserConfig) -> Denoiser:
    def run(x_t: np.ndarray, t: int) -> np.ndarray:
        return denoise(x_t, t, params, cfg).data
    return run


def _require_finite(x: np.ndarray, what: str, t: int) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite {what} at step t={t}", t)


def reconstruct(data: np.ndarray, geom: FanGeometry, denoiser: Denoiser,
                sched: DiffusionSchedule, pwls: PwlsConfig, tv: TvConfig,
                photon_count: float, *, is_image: bool = False,
                steps: int | None = None, renoise: bool = False,
                fbp_window: str = "hann", reference: np.ndarray | None = None
                ) -> tuple[np.ndarray, ReconReport]:
    """Reverse diffusion from the low-dose sinogram down to ``t = 0``, then FBP.

    ``data`` is the low-dose sinogram, or an image to be forward projected
    when ``is_image``.  ``steps`` overrides the loop length (0 gives plain
    FBP).  ``reference`` enables the metric fields of the report.
    """
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NumericError("non-finite input", None)
    y = forward_project(data, geom) if is_image else data
    if y.shape != geom.sinogram_shape:
        raise ValueError(f"sinogram shape {y.shape} does not match geometry "
                         f"{geom.sinogram_shape}")
    n_steps = sched.T if steps is None else steps
    if not 0 <= n_steps <= sched.T:
        raise ValueError(f"steps must be in [0, {sched.T}]")
    report = ReconReport()
    frozen_w = pwls_weights(y, photon_count, pwls.eta)
    x = y.copy()
    for t in range(n_steps, 0, -1):
        x_est = np.asarray(denoiser(x, t), dtype=np.float64)
        _require_finite(x_est, "denoiser output", t)
        w = frozen_w if pwls.freeze_weights else pwls_weights(x_est, photon_count, pwls.eta)
        g = tv_gradient(x_est, tv.eps) if pwls.prior_gradient else 0.0
        x = pwls_update(x_est, y, w, pwls.mu, g, pwls.mode)
        if tv.enabled:
            x = tv_step(x, tv)
        if renoise and t > 1:
            x = perturb(x, y, t - 1, sched)
        _require_finite(x, "sinogram estimate", t)
        report.steps.append({"t": t,
                             "fidelity_residual": float(np.linalg.norm(x - y)),
                             "tv": tv_seminorm(x, tv.eps)})
    img = fbp(x, geom, fbp_window)
    if reference is not None:
        m = evaluate(img, reference)
        report.psnr, report.ssim, report.mse = m["psnr"], m["ssim"], m["mse"]
    return img, report
