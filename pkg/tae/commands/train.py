"""
``tae train``: fit the enhancer on the training split.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import structlog

from tae.commands import common
from tae.services.dataset import load_dataset
from tae.services.training import LAST_CHECKPOINT, train

logger = structlog.get_logger(__name__)


def register(sub: argparse._SubParsersAction) -> None:
    parser = sub.add_parser("train", help="train the guidance nets and curve predictor")
    common.add_config(parser)
    parser.add_argument("--out", type=Path, default=None, help="checkpoint directory (default paths.output_dir)")
    parser.add_argument("--dataset", type=Path, default=None, help="dataset root (overrides paths.dataset_root)")
    common.add_mode(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    cfg = common.engine_config(args)
    if args.mode is not None:
        cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"mode": args.mode})}, deep=True)
    records = load_dataset(common.dataset_root(cfg), "train") if cfg.train.epochs > 0 else []

    out = args.out if args.out is not None else cfg.paths.output_dir
    history = train(cfg, records, out)
    final = history[-1].total if history else None
    logger.info("train_command_done", out=str(out), epochs=len(history), final_total=final)
    print(out / LAST_CHECKPOINT)
    return 0
