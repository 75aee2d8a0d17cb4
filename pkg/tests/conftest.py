from __future__ import annotations

import dataclasses
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fdct import config as config_io  # noqa: E402
from fdct.denoiser import DenoiserConfig, FhdConfig, LdfConfig, UnetConfig  # noqa: E402
from fdct.experiments import train_model  # noqa: E402

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def desk_cfg():
    return config_io.load(CONFIGS / "desk.yaml")


@pytest.fixture(scope="session")
def tiny_config_path():
    return CONFIGS / "tiny.yaml"


@pytest.fixture(scope="session")
def tiny_cfg(tiny_config_path):
    return config_io.load(tiny_config_path)


@pytest.fixture(scope="session")
def desk_run(desk_cfg):
    """The full desk-scale training run, shared by the end-to-end checks."""
    start = time.perf_counter()
    state = train_model(desk_cfg)
    return state, time.perf_counter() - start


@pytest.fixture
def small_den_cfg():
    """A denoiser small enough for finite-difference checks on 16x16 inputs."""
    return DenoiserConfig(
        sigma=0.1,
        fhd=FhdConfig(patch_size=4, embed_dim=6, n_heads=3, dilations=(1, 2, 3),
                      module_layout=("MHSA", "MHDA", "MHSA"), skip_links=((1, 3),),
                      mlp_ratio=2, time_dim=4),
        unet=UnetConfig(depth=2, base_channels=2, time_embedding_dim=4),
        ldf=LdfConfig(hidden_channels=3, n_layers=2),
        residual_scale=0.5)


def with_network(cfg, **overrides):
    return dataclasses.replace(cfg, network=dataclasses.replace(cfg.network, **overrides))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
