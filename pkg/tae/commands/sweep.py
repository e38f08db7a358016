"""
``tae sweep``: sensitivity of TA+MC tracking results to the localization-loss weight.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from tae.commands import common
from tae.commands.ablate import format_table
from tae.errors import ConfigError
from tae.services.dataset import load_dataset
from tae.services.experiments import lambda_sweep
from tae.services.tracking import tracker_factory


def parse_lambdas(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--lambdas: {exc}") from exc
    if not values or any(v < 0 for v in values):
        raise ConfigError(f"--lambdas must be a comma-separated list of values >= 0, got {text!r}")
    return values


def register(sub: argparse._SubParsersAction) -> None:
    parser = sub.add_parser("sweep", help="retrain TA+MC for several lambda_loc values")
    common.add_config(parser)
    parser.add_argument("--dataset", type=Path, default=None)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--lambdas", default="0,0.5,1,1.5,2")
    common.add_jobs(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    lambdas = parse_lambdas(args.lambdas)
    cfg = common.engine_config(args)
    root = common.dataset_root(cfg)
    rows = lambda_sweep(
        cfg,
        lambdas,
        load_dataset(root, "train"),
        load_dataset(root, "test"),
        tracker_factory(cfg.tracker),
        args.out,
        jobs=common.jobs(args),
    )
    print(format_table(rows))
    return 0
