"""
One-pass-evaluation metrics.

Conventions (echoed into every report's metadata):

- success(t): fraction of frames with IoU > t, t on an evenly spaced grid over [0, 1]
- S_AUC: mean of the success curve
- precision(e): fraction of frames with center error <= e pixels, e = 0..max
- P: precision at 20 px
- NormP: mean of the normalized-precision curve over [0, 0.5]
- frames whose ground truth is absent are left out; dataset values are the
  unweighted mean over sequences
"""

from __future__ import annotations

import csv
import json
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np
import structlog

from tae.config import MetricConfig
from tae.errors import EvaluationError
from tae.models.schemas import (
    AggregateMetrics,
    BBox,
    ComparisonRow,
    CurveSet,
    MetricReport,
    SequenceMetrics,
    TrackRun,
)

logger = structlog.get_logger(__name__)

COMPARISON_COLUMNS = ("name", "S_AUC", "delta_S_AUC", "P", "delta_P", "NormP", "delta_NormP")


# ── Box geometry ────────────────────────────────────────────────────────────

def iou(a: BBox, b: BBox) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def center_error(a: BBox, b: BBox) -> float:
    return float(np.hypot((a.x + a.w / 2) - (b.x + b.w / 2), (a.y + a.h / 2) - (b.y + b.h / 2)))


def norm_center_error(pred: BBox, gt: BBox) -> float:
    """Center offset scaled by the ground-truth extents."""
    if gt.w <= 0 or gt.h <= 0:
        raise EvaluationError(f"degenerate ground-truth box {gt.as_tuple()}")
    dx = ((pred.x + pred.w / 2) - (gt.x + gt.w / 2)) / gt.w
    dy = ((pred.y + pred.h / 2) - (gt.y + gt.h / 2)) / gt.h
    return float(np.hypot(dx, dy))


def _as_array(boxes: Sequence[BBox]) -> np.ndarray:
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64).reshape(-1, 4)


def frame_errors(pred: Sequence[BBox], gt: Sequence[BBox]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (IoU, center error, normalized center error) per frame."""
    p, g = _as_array(pred), _as_array(gt)
    ix = np.clip(np.minimum(p[:, 0] + p[:, 2], g[:, 0] + g[:, 2]) - np.maximum(p[:, 0], g[:, 0]), 0, None)
    iy = np.clip(np.minimum(p[:, 1] + p[:, 3], g[:, 1] + g[:, 3]) - np.maximum(p[:, 1], g[:, 1]), 0, None)
    inter = ix * iy
    union = p[:, 2] * p[:, 3] + g[:, 2] * g[:, 3] - inter
    ious = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)

    d = (p[:, :2] + p[:, 2:] / 2) - (g[:, :2] + g[:, 2:] / 2)
    errors = np.hypot(d[:, 0], d[:, 1])
    norm_errors = np.hypot(d[:, 0] / g[:, 2], d[:, 1] / g[:, 3])
    return ious, errors, norm_errors


# ── Threshold grids ─────────────────────────────────────────────────────────

def success_thresholds(cfg: MetricConfig) -> np.ndarray:
    return np.linspace(0.0, 1.0, cfg.success_steps)


def precision_thresholds(cfg: MetricConfig) -> np.ndarray:
    return np.arange(0, cfg.precision_max_px + 1, dtype=np.float64)


def norm_precision_thresholds(cfg: MetricConfig) -> np.ndarray:
    return np.linspace(0.0, cfg.norm_precision_max, cfg.norm_precision_steps)


def conventions(cfg: MetricConfig) -> dict:
    return {
        "success": f"fraction of frames with IoU > t, {cfg.success_steps} thresholds over [0, 1]",
        "s_auc": "mean of the success curve",
        "precision": f"fraction of frames with center error <= e px, e = 0..{cfg.precision_max_px}",
        "p_at_px": cfg.precision_at_px,
        "norm_precision": (
            f"fraction with normalized center error <= e, "
            f"{cfg.norm_precision_steps} thresholds over [0, {cfg.norm_precision_max}]"
        ),
        "norm_p": "mean of the normalized-precision curve",
        "center": "x + w/2, y + h/2",
        "aggregation": "unweighted mean over sequences",
        "absent_ground_truth": "frame excluded",
    }


# ── Metrics ─────────────────────────────────────────────────────────────────

def sequence_metrics(
    run: TrackRun, gt: Sequence[BBox | None], cfg: MetricConfig | None = None
) -> SequenceMetrics:
    cfg = cfg or MetricConfig()
    if len(run.boxes) != len(gt):
        raise EvaluationError(
            f"sequence {run.sequence_id}: {len(run.boxes)} predictions for {len(gt)} frames"
        )
    pairs = [(p, g) for p, g in zip(run.boxes, gt) if g is not None]
    if not pairs:
        raise EvaluationError(f"sequence {run.sequence_id}: no frame has ground truth")
    ious, errors, norm_errors = frame_errors([p for p, _ in pairs], [g for _, g in pairs])

    success = (ious[None, :] > success_thresholds(cfg)[:, None]).mean(axis=1)
    precision = (errors[None, :] <= precision_thresholds(cfg)[:, None]).mean(axis=1)
    norm_precision = (norm_errors[None, :] <= norm_precision_thresholds(cfg)[:, None]).mean(axis=1)
    return SequenceMetrics(
        sequence_id=run.sequence_id,
        frames=len(pairs),
        curves=CurveSet(
            success=success.tolist(), precision=precision.tolist(), norm_precision=norm_precision.tolist()
        ),
        success_auc=float(success.mean()),
        precision=float((errors <= cfg.precision_at_px).mean()),
        norm_precision=float(norm_precision.mean()),
        fps=run.fps,
    )


def compute_metrics(
    runs: Sequence[TrackRun],
    gt: Mapping[str, Sequence[BBox | None]],
    cfg: MetricConfig | None = None,
) -> MetricReport:
    """Per-sequence curves and scalars plus their mean over sequences."""
    cfg = cfg or MetricConfig()
    if not runs:
        raise EvaluationError("no tracking runs to evaluate")
    per_seq = []
    for run in runs:
        if run.sequence_id not in gt:
            raise EvaluationError(f"no ground truth for sequence {run.sequence_id}")
        per_seq.append(sequence_metrics(run, gt[run.sequence_id], cfg))

    def mean_curve(name: str) -> list[float]:
        return np.mean([getattr(s.curves, name) for s in per_seq], axis=0).tolist()

    mean = AggregateMetrics(
        sequences=len(per_seq),
        curves=CurveSet(
            success=mean_curve("success"),
            precision=mean_curve("precision"),
            norm_precision=mean_curve("norm_precision"),
        ),
        success_auc=float(np.mean([s.success_auc for s in per_seq])),
        precision=float(np.mean([s.precision for s in per_seq])),
        norm_precision=float(np.mean([s.norm_precision for s in per_seq])),
    )
    return MetricReport(
        success_thresholds=success_thresholds(cfg).tolist(),
        precision_thresholds=precision_thresholds(cfg).tolist(),
        norm_precision_thresholds=norm_precision_thresholds(cfg).tolist(),
        mean=mean,
        sequences=per_seq,
        metadata={"conventions": conventions(cfg)},
    )


# ── Comparisons ─────────────────────────────────────────────────────────────

def compare(reports: Sequence[tuple[str, MetricReport]], reference: str | None = None) -> list[ComparisonRow]:
    """Scalar table; deltas are percentage points against *reference* (default: first row)."""
    if not reports:
        return []
    ref_name = reference if reference is not None else reports[0][0]
    lookup = dict(reports)
    if ref_name not in lookup:
        raise EvaluationError(f"reference row {ref_name!r} not among {list(lookup)}")
    ref = lookup[ref_name].mean

    rows = []
    for name, report in reports:
        m = report.mean
        delta = name != ref_name
        rows.append(
            ComparisonRow(
                name=name,
                success_auc=m.success_auc,
                precision=m.precision,
                norm_precision=m.norm_precision,
                delta_success_auc=100.0 * (m.success_auc - ref.success_auc) if delta else None,
                delta_precision=100.0 * (m.precision - ref.precision) if delta else None,
                delta_norm_precision=100.0 * (m.norm_precision - ref.norm_precision) if delta else None,
            )
        )
    return rows


# ── Writers ─────────────────────────────────────────────────────────────────

def write_report_json(report: MetricReport, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
    return path


def read_report_json(path: Path | str) -> MetricReport:
    return MetricReport.model_validate_json(Path(path).read_text(encoding="utf-8"))


def _pct(value: float | None) -> str:
    return "" if value is None else f"{value:.3f}"


def write_comparison_csv(rows: Sequence[ComparisonRow], path: Path | str) -> Path:
    """Scalars and deltas, both in percent."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARISON_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.name,
                    _pct(100.0 * r.success_auc),
                    _pct(r.delta_success_auc),
                    _pct(100.0 * r.precision),
                    _pct(r.delta_precision),
                    _pct(100.0 * r.norm_precision),
                    _pct(r.delta_norm_precision),
                ]
            )
    return path


def write_curve_tsv(thresholds: Sequence[float], values: Sequence[float], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["threshold\tvalue"] + [f"{t:.6g}\t{v:.10g}" for t, v in zip(thresholds, values)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_plot_data(report: MetricReport, out_dir: Path | str, prefix: str = "") -> list[Path]:
    """Success, precision and normalized-precision curves, one TSV each."""
    out_dir = Path(out_dir)
    curves = report.mean.curves
    return [
        write_curve_tsv(report.success_thresholds, curves.success, out_dir / f"{prefix}success.tsv"),
        write_curve_tsv(report.precision_thresholds, curves.precision, out_dir / f"{prefix}precision.tsv"),
        write_curve_tsv(
            report.norm_precision_thresholds, curves.norm_precision, out_dir / f"{prefix}norm_precision.tsv"
        ),
    ]
