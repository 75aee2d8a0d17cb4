"""Strict run configuration: one YAML document with fixed sections.

Unknown keys and ill-typed values are rejected with the dotted path of the
offending field.  :func:`resolved_dict` returns every field including
defaults; that is what gets written next to outputs and into checkpoints.
"""
from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .denoiser import DenoiserConfig, FhdConfig, LdfConfig, UnetConfig
from .diffusion import DiffusionSchedule, make_schedule
from .geometry import DoseModel, FanGeometry
from .recon import PwlsConfig, TvConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class DoseConfig:
    photon_count: float = 1e5
    electronic_sigma: float = 0.0

    def __post_init__(self):
        DoseModel(self.photon_count, self.electronic_sigma)


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 10
    kind: str = "linear"

    def __post_init__(self):
        make_schedule(self.T, self.kind)


@dataclass(frozen=True)
class NetworkConfig:
    """Denoiser architecture without the frequency split width."""

    fhd: FhdConfig = field(default_factory=FhdConfig)
    unet: UnetConfig = field(default_factory=UnetConfig)
    ldf: LdfConfig = field(default_factory=LdfConfig)
    use_fhd: bool = True
    use_fld: bool = True
    use_ffd: bool = True
    fusion: str = "ldf"
    residual_scale: float = 0.02


@dataclass(frozen=True)
class DataConfig:
    phantom: str = "random_ellipses"
    # linear attenuation (per geometry length unit) of a unit-valued pixel
    attenuation: float = 1.25
    train_pairs: int = 32
    validation_pairs: int = 8
    test_phantoms: int = 10

    def __post_init__(self):
        if self.phantom not in ("random_ellipses", "shepp_logan"):
            raise ValueError("phantom must be random_ellipses or shepp_logan")
        if not self.attenuation > 0:
            raise ValueError("attenuation must be > 0")
        if min(self.train_pairs, self.validation_pairs, self.test_phantoms) < 1:
            raise ValueError("dataset sizes must be >= 1")


@dataclass(frozen=True)
class ReconConfig:
    fbp_window: str = "ramp"
    renoise: bool = False

    def __post_init__(self):
        if self.fbp_window not in ("ramp", "hann"):
            raise ValueError("fbp_window must be ramp or hann")


@dataclass(frozen=True)
class PathsConfig:
    out: str = "runs/default"
    checkpoint: str = ""
    data: str = ""


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    sigma: float = 0.08
    geometry: FanGeometry = field(default_factory=FanGeometry)
    dose: DoseConfig = field(default_factory=DoseConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    pwls: PwlsConfig = field(default_factory=PwlsConfig)
    tv: TvConfig = field(default_factory=TvConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    data: DataConfig = field(default_factory=DataConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def denoiser(self) -> DenoiserConfig:
        net = {f.name: getattr(self.network, f.name) for f in dataclasses.fields(self.network)}
        return DenoiserConfig(sigma=self.sigma, **net)

    def schedule_obj(self) -> DiffusionSchedule:
        return make_schedule(self.schedule.T, self.schedule.kind)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.training, seed=self.seed)

    def dose_model(self, seed: int, photon_count: float | None = None) -> DoseModel:
        i0 = self.dose.photon_count if photon_count is None else photon_count
        return DoseModel(i0, self.dose.electronic_sigma, seed)


# fields that are derived from elsewhere and never read from the document
_DERIVED = {TrainConfig: {"seed"}}


def _coerce(value: Any, tp: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
        return _build(tp, value, path)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(path, f"expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, str):
            # YAML 1.1 reads "1e5" as a string
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(path, f"expected a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        if math.isnan(value):
            raise ConfigError(path, "NaN is not allowed")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {tp!r}")


def _build(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    skip = _DERIVED.get(cls, set())
    names = [f.name for f in dataclasses.fields(cls) if f.name not in skip]
    prefix = f"{path}." if path else ""
    for key in data:
        if key not in names:
            raise ConfigError(f"{prefix}{key}", "unknown key")
    kwargs = {k: _coerce(data[k], hints[k], f"{prefix}{k}") for k in names if k in data}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path or "config", str(exc)) from None


def from_dict(data: dict | None) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("", "config document must be a mapping")
    cfg = _build(RunConfig, data)
    try:
        cfg.denoiser()
    except ValueError as exc:
        raise ConfigError("network", str(exc)) from None
    return cfg


def load(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"YAML syntax error: {exc}") from None
    return from_dict(data)


def resolved_dict(cfg: Any) -> dict:
    """Every field of ``cfg`` (defaults included) as plain YAML/JSON types."""
    def plain(v):
        if dataclasses.is_dataclass(v):
            skip = _DERIVED.get(type(v), set())
            return {f.name: plain(getattr(v, f.name))
                    for f in dataclasses.fields(v) if f.name not in skip}
        if isinstance(v, (tuple, list)):
            return [plain(x) for x in v]
        return v
    return plain(cfg)


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(resolved_dict(cfg), sort_keys=False)


def write_resolved(cfg: RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "resolved_config.yaml"
    target.write_text(dump(cfg))
    return target
