"""
Tracker adapters and the one-pass evaluation (OPE) runner.

A tracker is initialized with the first-frame ground truth and then only
updated; there is no re-initialization. Sequences run independently on a
thread pool, one tracker instance per sequence.
"""

from __future__ import annotations

import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import cv2
import numpy as np
import structlog
from torch import Tensor

from tae.config import MetricConfig, TrackerConfig
from tae.errors import EvaluationError
from tae.models.schemas import BBox, ComparisonRow, MetricReport, SequenceRecord, TrackRun
from tae.services.enhancement import Enhancer
from tae.services.image_io import read_image
from tae.services.metrics import compare, compute_metrics

logger = structlog.get_logger(__name__)


@runtime_checkable
class TrackerAdapter(Protocol):
    def init(self, frame: Tensor, box: BBox) -> None: ...

    def update(self, frame: Tensor) -> BBox: ...


TrackerFactory = Callable[[SequenceRecord], TrackerAdapter]


def to_gray(frame: Tensor) -> np.ndarray:
    """H×W float32 luminance (channel mean) for OpenCV."""
    return np.ascontiguousarray(frame.detach().mean(dim=0).numpy().astype(np.float32))


# ── Trackers ────────────────────────────────────────────────────────────────

class NCCTracker:
    """
    Normalized cross-correlation against the frame-1 template, searched within
    ``search_radius`` pixels of the previous template position. The template is
    never updated and the box keeps its initial size.
    """

    def __init__(self, template_size: int | None = None, search_radius: int = 16) -> None:
        if search_radius < 1:
            raise EvaluationError(f"search radius must be >= 1, got {search_radius}")
        self.template_size = template_size
        self.search_radius = search_radius
        self.last_score: float | None = None
        self._template: np.ndarray | None = None
        self._pos: tuple[int, int] = (0, 0)  # template top-left
        self._box: BBox | None = None

    def init(self, frame: Tensor, box: BBox) -> None:
        gray = to_gray(frame)
        height, width = gray.shape
        if self.template_size is None:
            tw, th = max(1, round(box.w)), max(1, round(box.h))
            tx, ty = round(box.x), round(box.y)
        else:
            tw = th = self.template_size
            tx = round(box.x + box.w / 2 - tw / 2)
            ty = round(box.y + box.h / 2 - th / 2)
        tx, ty = min(max(tx, 0), max(width - tw, 0)), min(max(ty, 0), max(height - th, 0))
        tw, th = min(tw, width - tx), min(th, height - ty)

        self._template = gray[ty : ty + th, tx : tx + tw].copy()
        self._pos = (tx, ty)
        self._box = box
        self.last_score = 1.0

    def update(self, frame: Tensor) -> BBox:
        if self._template is None or self._box is None:
            raise EvaluationError("NCCTracker.update called before init")
        gray = to_gray(frame)
        height, width = gray.shape
        th, tw = self._template.shape
        tx, ty = self._pos
        r = self.search_radius

        x0, y0 = max(tx - r, 0), max(ty - r, 0)
        x1, y1 = min(tx + r + tw, width), min(ty + r + th, height)
        window = gray[y0:y1, x0:x1]
        if window.shape[0] < th or window.shape[1] < tw or float(self._template.std()) == 0.0:
            return self._box

        scores = np.nan_to_num(cv2.matchTemplate(window, self._template, cv2.TM_CCOEFF_NORMED), nan=-1.0)
        best = scores.max()
        iy, ix = np.nonzero(scores == best)
        # among ties, stay closest to the previous position
        k = int(np.argmin(np.abs(ix + x0 - tx) + np.abs(iy + y0 - ty)))
        new_tx, new_ty = int(ix[k]) + x0, int(iy[k]) + y0

        self._box = self._box.shifted(new_tx - tx, new_ty - ty)
        self._pos = (new_tx, new_ty)
        self.last_score = float(best)
        return self._box


class OracleTracker:
    """Replays the ground truth; absent frames repeat the last known box."""

    def __init__(self, boxes: Sequence[BBox | None]) -> None:
        self.boxes = list(boxes)
        self._index = 0
        self._last: BBox | None = None

    def init(self, frame: Tensor, box: BBox) -> None:
        self._index = 0
        self._last = box

    def update(self, frame: Tensor) -> BBox:
        self._index += 1
        box = self.boxes[self._index] if self._index < len(self.boxes) else None
        if box is not None:
            self._last = box
        if self._last is None:
            raise EvaluationError("OracleTracker.update called before init")
        return self._last


class StaticTracker:
    """Always answers with the initialization box."""

    def __init__(self) -> None:
        self._box: BBox | None = None

    def init(self, frame: Tensor, box: BBox) -> None:
        self._box = box

    def update(self, frame: Tensor) -> BBox:
        if self._box is None:
            raise EvaluationError("StaticTracker.update called before init")
        return self._box


def tracker_factory(cfg: TrackerConfig) -> TrackerFactory:
    if cfg.name == "ncc":
        return lambda record: NCCTracker(cfg.template_size, cfg.search_radius)
    if cfg.name == "oracle":
        return lambda record: OracleTracker(record.boxes)
    if cfg.name == "static":
        return lambda record: StaticTracker()
    raise EvaluationError(f"unknown tracker {cfg.name!r}")


# ── OPE ─────────────────────────────────────────────────────────────────────

@dataclass
class OPEResult:
    runs: list[TrackRun]
    report: MetricReport
    reference_runs: list[TrackRun] | None = None
    reference_report: MetricReport | None = None
    comparison: list[ComparisonRow] = field(default_factory=list)


def track_sequence(
    record: SequenceRecord,
    tracker: TrackerAdapter,
    enhancer: Enhancer | None = None,
) -> TrackRun:
    """Initialize on frame 1 with ground truth, update on every later frame."""
    if len(record) < 2:
        raise EvaluationError(f"sequence {record.id} needs at least 2 frames, has {len(record)}")
    first_box = record.boxes[0]
    if first_box is None:
        raise EvaluationError(f"sequence {record.id} has no first-frame ground truth")

    with structlog.contextvars.bound_contextvars(sequence=record.id):
        boxes: list[BBox] = []
        times: list[float] = []
        for n, path in enumerate(record.frames):
            frame = read_image(path)
            start = time.perf_counter()
            if enhancer is not None:
                frame = enhancer(frame)
            if n == 0:
                tracker.init(frame, first_box)
                box = first_box
            else:
                try:
                    box = tracker.update(frame)
                except Exception as exc:
                    logger.warning("tracker_update_failed", frame=n + 1, error=str(exc))
                    box = boxes[-1]
            times.append(time.perf_counter() - start)
            boxes.append(box)
        logger.debug("sequence_tracked", frames=len(boxes))
    return TrackRun(sequence_id=record.id, boxes=boxes, times=times)


def _run_all(
    sequences: Sequence[SequenceRecord],
    factory: TrackerFactory,
    enhancer: Enhancer | None,
    jobs: int,
) -> list[TrackRun]:
    def one(record: SequenceRecord) -> TrackRun:
        return track_sequence(record, factory(record), enhancer)

    if jobs <= 1:
        return [one(r) for r in sequences]
    with ThreadPoolExecutor(max_workers=jobs, thread_name_prefix="tae-ope") as pool:
        return list(pool.map(one, sequences))


def run_ope(
    sequences: Sequence[SequenceRecord],
    factory: TrackerFactory,
    enhancer: Enhancer | None = None,
    *,
    compare_without: bool = False,
    jobs: int = 1,
    metric_cfg: MetricConfig | None = None,
) -> OPEResult:
    """
    Track every sequence and score the runs. With ``compare_without`` and an
    enhancer, the same protocol is also run on the raw frames and the result
    carries the enhanced-minus-raw deltas.
    """
    if not sequences:
        raise EvaluationError("no sequences to evaluate")
    gt = {r.id: r.boxes for r in sequences}
    mode = enhancer.mode if enhancer is not None else "none"
    logger.info("ope_started", sequences=len(sequences), enhancer=mode, jobs=jobs)

    runs = _run_all(sequences, factory, enhancer, jobs)
    report = compute_metrics(runs, gt, metric_cfg)
    report.metadata["enhancer"] = mode
    result = OPEResult(runs=runs, report=report)

    if compare_without and enhancer is not None:
        result.reference_runs = _run_all(sequences, factory, None, jobs)
        result.reference_report = compute_metrics(result.reference_runs, gt, metric_cfg)
        result.reference_report.metadata["enhancer"] = "none"
        result.comparison = compare([("none", result.reference_report), (mode, report)])

    logger.info(
        "ope_complete",
        sequences=len(runs),
        s_auc=round(report.mean.success_auc, 6),
        precision=round(report.mean.precision, 6),
        norm_precision=round(report.mean.norm_precision, 6),
    )
    return result
