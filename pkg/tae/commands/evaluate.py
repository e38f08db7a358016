"""
``tae eval``: one-pass evaluation of a tracker, optionally on enhanced frames.

Writes the JSON report at ``--report``, the scalar table next to it
(``.csv``) and the curve plot data (``<stem>_success.tsv`` ...).
"""

from __future__ import annotations

import argparse
from datetime import datetime, timezone
from pathlib import Path

import structlog

from tae.commands import common
from tae.services.checkpoint import load_enhancer
from tae.services.metrics import compare, write_comparison_csv, write_plot_data, write_report_json
from tae.services.tracking import run_ope, tracker_factory

logger = structlog.get_logger(__name__)


def register(sub: argparse._SubParsersAction) -> None:
    parser = sub.add_parser("eval", help="run one-pass evaluation on the test split")
    common.add_config(parser)
    parser.add_argument("--dataset", type=Path, default=None)
    parser.add_argument("--tracker", choices=("ncc", "oracle", "static"), default=None)
    parser.add_argument("--enhance", type=Path, default=None, metavar="CKPT", help="enhance frames with this checkpoint")
    common.add_mode(parser)
    parser.add_argument(
        "--compare", action="store_true", help="with --enhance, also run on raw frames and report deltas"
    )
    parser.add_argument("--attribute", type=int, default=None, help="only sequences with this attribute flag set")
    parser.add_argument("--report", type=Path, required=True, help="JSON report path")
    common.add_jobs(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    cfg = common.engine_config(args)
    tracker_cfg = cfg.tracker if args.tracker is None else cfg.tracker.model_copy(update={"name": args.tracker})
    sequences = common.eval_sequences(cfg, args.attribute)
    enhancer = load_enhancer(args.enhance, args.mode) if args.enhance is not None else None

    result = run_ope(
        sequences,
        tracker_factory(tracker_cfg),
        enhancer,
        compare_without=args.compare,
        jobs=common.jobs(args),
        metric_cfg=cfg.metrics,
    )
    report = result.report
    report.metadata.update(
        {
            "tracker": tracker_cfg.name,
            "attribute": args.attribute,
            "generated_at": datetime.now(timezone.utc).isoformat(),
        }
    )
    rows = result.comparison or compare([(report.metadata["enhancer"], report)])

    write_report_json(report, args.report)
    write_comparison_csv(rows, args.report.with_suffix(".csv"))
    write_plot_data(report, args.report.parent, prefix=f"{args.report.stem}_")
    if result.reference_report is not None:
        write_plot_data(result.reference_report, args.report.parent, prefix=f"{args.report.stem}_none_")

    m = report.mean
    print(f"S_AUC={m.success_auc:.6f} P={m.precision:.6f} NormP={m.norm_precision:.6f}")
    return 0
