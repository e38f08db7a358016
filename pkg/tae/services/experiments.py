"""
Multi-run experiments built from training + OPE.

- ablation: raw frames vs. the baseline, +TA and +TA+MC enhancers
- lambda sweep: TA+MC retrained for each localization-loss weight
"""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import structlog

from tae.config import EngineConfig, Mode
from tae.models.schemas import ComparisonRow, MetricReport, SequenceRecord
from tae.services.enhancement import Enhancer
from tae.services.metrics import compare, write_comparison_csv, write_plot_data, write_report_json
from tae.services.tracking import TrackerFactory, run_ope
from tae.services.training import Trainer

logger = structlog.get_logger(__name__)

ABLATION_ROWS: dict[str, Mode | None] = {
    "none": None,
    "baseline": "baseline",
    "+TA": "TA",
    "+TA+MC": "TA+MC",
}


def train_enhancer(
    cfg: EngineConfig, mode: Mode, train_records: Sequence[SequenceRecord], out_dir: Path
) -> Enhancer:
    run_cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"mode": mode})}, deep=True)
    trainer = Trainer(run_cfg, out_dir)
    trainer.fit(train_records)
    return Enhancer(trainer.guidance, trainer.predictor, mode)


def evaluate(
    cfg: EngineConfig,
    test_records: Sequence[SequenceRecord],
    factory: TrackerFactory,
    enhancer: Enhancer | None,
    out_dir: Path,
    jobs: int = 1,
) -> MetricReport:
    report = run_ope(test_records, factory, enhancer, jobs=jobs, metric_cfg=cfg.metrics).report
    write_report_json(report, out_dir / "report.json")
    write_plot_data(report, out_dir)
    return report


def ablation(
    cfg: EngineConfig,
    train_records: Sequence[SequenceRecord],
    test_records: Sequence[SequenceRecord],
    factory: TrackerFactory,
    out_dir: Path | str,
    jobs: int = 1,
) -> list[ComparisonRow]:
    """Train one enhancer per mode and compare every condition against raw frames."""
    out_dir = Path(out_dir)
    reports: list[tuple[str, MetricReport]] = []
    for name, mode in ABLATION_ROWS.items():
        run_dir = out_dir / (mode or "none")
        enhancer = None if mode is None else train_enhancer(cfg, mode, train_records, run_dir)
        report = evaluate(cfg, test_records, factory, enhancer, run_dir, jobs)
        logger.info("ablation_condition_done", condition=name, s_auc=round(report.mean.success_auc, 6))
        reports.append((name, report))

    rows = compare(reports, reference="none")
    write_comparison_csv(rows, out_dir / "ablation.csv")
    return rows


def lambda_sweep(
    cfg: EngineConfig,
    lambdas: Sequence[float],
    train_records: Sequence[SequenceRecord],
    test_records: Sequence[SequenceRecord],
    factory: TrackerFactory,
    out_dir: Path | str,
    jobs: int = 1,
) -> list[ComparisonRow]:
    """TA+MC retrained per λ_loc; deltas are against the first value."""
    out_dir = Path(out_dir)
    reports: list[tuple[str, MetricReport]] = []
    for value in lambdas:
        weights = cfg.train.loss_weights.model_copy(update={"lambda_loc": value})
        run_cfg = cfg.model_copy(
            update={"train": cfg.train.model_copy(update={"loss_weights": weights})}, deep=True
        )
        name = f"lambda_loc={value:g}"
        run_dir = out_dir / name
        enhancer = train_enhancer(run_cfg, "TA+MC", train_records, run_dir)
        report = evaluate(run_cfg, test_records, factory, enhancer, run_dir, jobs)
        logger.info("sweep_point_done", lambda_loc=value, s_auc=round(report.mean.success_auc, 6))
        reports.append((name, report))

    rows = compare(reports)
    write_comparison_csv(rows, out_dir / "sweep.csv")
    return rows

