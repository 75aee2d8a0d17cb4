"""Image-quality metrics: MSE, PSNR and Gaussian-window SSIM."""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, data_range: float) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB for near-identical inputs."""
    if not data_range > 0:
        raise ValueError("data_range must be > 0")
    err = mse(a, b)
    if err < 1e-12:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(data_range ** 2 / err))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, data_range: float, win: int = 11, sigma: float = 1.5,
             k1: float = 0.01, k2: float = 0.03) -> np.ndarray:
    """SSIM at every fully-contained ``win x win`` window position."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < win:
        raise ValueError(f"ssim needs 2-D images of at least {win}x{win}, got {a.shape}")
    if not data_range > 0:
        raise ValueError("data_range must be > 0")
    w = gaussian_window(win, sigma)

    def filt(x):
        return np.einsum("ijkl,kl->ij", sliding_window_view(x, (win, win)), w)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(a, b, data_range: float, **kw) -> float:
    return float(np.mean(ssim_map(a, b, data_range, **kw)))


def evaluate(img, reference) -> dict[str, float]:
    """PSNR/SSIM/MSE against ``reference`` with data range = reference max - min."""
    reference = np.asarray(reference, dtype=np.float64)
    rng = float(reference.max() - reference.min()) or 1.0
    return {"psnr": psnr(img, reference, rng),
            "ssim": ssim(img, reference, rng),
            "mse": mse(img, reference)}
