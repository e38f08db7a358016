"""
Argument helpers shared by the subcommands.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from tae.config import MODES, EngineConfig, load_config, settings
from tae.errors import ConfigError
from tae.models.schemas import SequenceRecord
from tae.services.dataset import filter_by_attribute, load_dataset


def add_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="engine YAML config (defaults if omitted)")


def add_jobs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--jobs", type=int, default=None, help=f"worker threads (default TAE_JOBS={settings.jobs})")


def add_mode(parser: argparse.ArgumentParser, default: str | None = None) -> None:
    parser.add_argument("--mode", choices=MODES, default=default)


def jobs(args: argparse.Namespace) -> int:
    value = args.jobs if args.jobs is not None else settings.jobs
    if value < 1:
        raise ConfigError(f"--jobs must be >= 1, got {value}")
    return value


def engine_config(args: argparse.Namespace) -> EngineConfig:
    """Load ``--config`` and apply the ``--dataset`` override when present."""
    cfg = load_config(args.config)
    dataset = getattr(args, "dataset", None)
    if dataset is not None:
        cfg = cfg.model_copy(update={"paths": cfg.paths.model_copy(update={"dataset_root": dataset})}, deep=True)
    return cfg


def dataset_root(cfg: EngineConfig) -> Path:
    if cfg.paths.dataset_root is None:
        raise ConfigError("paths.dataset_root: no dataset given (use --dataset or the config file)")
    return cfg.paths.dataset_root


def eval_sequences(cfg: EngineConfig, attribute: int | None = None) -> list[SequenceRecord]:
    records = load_dataset(dataset_root(cfg), "test")
    return records if attribute is None else filter_by_attribute(records, attribute)
