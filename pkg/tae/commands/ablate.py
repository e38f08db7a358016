"""
``tae ablate``: raw frames vs. baseline, +TA and +TA+MC enhancers on one tracker.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from tae.commands import common
from tae.models.schemas import ComparisonRow
from tae.services.dataset import load_dataset
from tae.services.experiments import ablation
from tae.services.tracking import tracker_factory


def register(sub: argparse._SubParsersAction) -> None:
    parser = sub.add_parser("ablate", help="train every mode and compare against raw frames")
    common.add_config(parser)
    parser.add_argument("--dataset", type=Path, default=None)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--tracker", choices=("ncc", "oracle", "static"), default=None)
    common.add_jobs(parser)
    parser.set_defaults(handler=run)


def format_table(rows: list[ComparisonRow]) -> str:
    """Fixed-width table in percent; deltas in percentage points."""

    def cell(value: float | None, scale: float = 1.0) -> str:
        return f"{'-':>8}" if value is None else f"{scale * value:8.2f}"

    lines = [f"{'condition':<16}{'S_AUC':>8}{'Δ':>8}{'P':>8}{'Δ':>8}{'NormP':>8}{'Δ':>8}"]
    for r in rows:
        lines.append(
            f"{r.name:<16}{cell(r.success_auc, 100)}{cell(r.delta_success_auc)}"
            f"{cell(r.precision, 100)}{cell(r.delta_precision)}"
            f"{cell(r.norm_precision, 100)}{cell(r.delta_norm_precision)}"
        )
    return "\n".join(lines)


def run(args: argparse.Namespace) -> int:
    cfg = common.engine_config(args)
    if args.tracker is not None:
        cfg = cfg.model_copy(update={"tracker": cfg.tracker.model_copy(update={"name": args.tracker})}, deep=True)
    root = common.dataset_root(cfg)
    rows = ablation(
        cfg,
        load_dataset(root, "train"),
        load_dataset(root, "test"),
        tracker_factory(cfg.tracker),
        args.out,
        jobs=common.jobs(args),
    )
    print(format_table(rows))
    return 0
