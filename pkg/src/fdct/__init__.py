"""Frequency-decoupled diffusion denoising for low-dose fan-beam CT sinograms."""
from .config import RunConfig
from .denoiser import DenoiserConfig, denoise, init_params
from .diffusion import make_schedule, perturb
from .frequency import decompose, gaussian_mask
from .geometry import DoseModel, FanGeometry, fbp, forward_project, make_phantom, simulate_low_dose
from .metrics import mse, psnr, ssim
from .recon import PwlsConfig, TvConfig, reconstruct

__version__ = "0.1.0"

__all__ = [
    "DenoiserConfig", "DoseModel", "FanGeometry", "PwlsConfig", "RunConfig", "TvConfig",
    "decompose", "denoise", "fbp", "forward_project", "gaussian_mask", "init_params",
    "make_phantom", "make_schedule", "mse", "perturb", "psnr", "reconstruct",
    "simulate_low_dose", "ssim",
]
