"""Mean-preserving interpolation between clean and low-dose sinograms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEDULE_KINDS = ("linear",)


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    kind: str
    alphas: np.ndarray

    def alpha(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"step {t} outside [0, {self.T}]")
        return float(self.alphas[t])


def make_schedule(T: int, kind: str = "linear") -> DiffusionSchedule:
    """``alpha_t`` for ``t = 0..T`` with ``alpha_0 = 1``, ``alpha_T = 0``."""
    if T < 1 or int(T) != T:
        raise ValueError(f"T must be a positive integer, got {T}")
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}")
    T = int(T)
    alphas = 1.0 - np.arange(T + 1) / T
    return DiffusionSchedule(T=T, kind=kind, alphas=alphas)


def perturb(x0: np.ndarray, xT: np.ndarray, t: int,
            sched: DiffusionSchedule) -> np.ndarray:
    """``alpha_t * x0 + (1 - alpha_t) * xT`` with exact endpoints."""
    x0 = np.asarray(x0, dtype=np.float64)
    xT = np.asarray(xT, dtype=np.float64)
    if x0.shape != xT.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {xT.shape}")
    a = sched.alpha(t)
    if a == 1.0:
        return x0.copy()
    if a == 0.0:
        return xT.copy()
    return a * x0 + (1.0 - a) * xT


def sample_step(rng: np.random.Generator, T: int) -> int:
    """Uniform integer step in ``[1, T]``."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return int(rng.integers(1, T + 1))
