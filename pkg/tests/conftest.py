"""
Shared fixtures: seeded generators, tiny configs and on-disk synthetic datasets.
"""

from __future__ import annotations

from pathlib import Path

import pytest
import structlog
import torch

from tae.config import EngineConfig, SynthConfig, parse_config
from tae.services.synth import synth_dataset


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--run-slow", action="store_true", default=False, help="run slow experiments")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def _reset_logging():
    yield
    structlog.reset_defaults()


@pytest.fixture
def gen() -> torch.Generator:
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def tiny_synth() -> SynthConfig:
    return SynthConfig(
        train_sequences=2,
        test_sequences=2,
        frames=5,
        height=24,
        width=32,
        target_size=6,
        target_speed=1.0,
        seed=3,
    )


@pytest.fixture
def tiny_cfg(tmp_path: Path) -> EngineConfig:
    """Small networks and inputs so a training epoch takes well under a second."""
    return parse_config(
        {
            "seed": 5,
            "train": {
                "epochs": 2,
                "batch_size": 4,
                "input_size": 16,
                "loader_workers": 2,
                "prefetch": 3,
                "learning_rate": 1e-3,
            },
            "guidance": {"channels": 4},
            "enhancement": {"predictor_channels": 4},
            "tracker": {"name": "oracle"},
            "paths": {"output_dir": str(tmp_path / "runs")},
        }
    )


@pytest.fixture
def synth_root(tmp_path: Path, tiny_synth: SynthConfig) -> Path:
    root = tmp_path / "synth"
    synth_dataset(tiny_synth, root)
    return root
