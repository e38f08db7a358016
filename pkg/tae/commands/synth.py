"""
``tae synth``: write a synthetic low-light tracking dataset.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from tae.commands import common
from tae.services.synth import synth_dataset


def register(sub: argparse._SubParsersAction) -> None:
    parser = sub.add_parser("synth", help="generate a synthetic dataset")
    common.add_config(parser)
    parser.add_argument("--out", type=Path, required=True)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    cfg = common.engine_config(args)
    sequences = synth_dataset(cfg.synth, args.out)
    print(f"{len(sequences)} sequences written to {args.out}")
    return 0
