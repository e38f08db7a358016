"""
Pydantic schemas for boxes, dataset records, tracking runs and reports.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

ATTRIBUTE_COUNT = 12


# ── Boxes ───────────────────────────────────────────────────────────────────

class BBox(BaseModel):
    """Axis-aligned box in pixels: top-left corner plus extents."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    x: float
    y: float
    w: float = Field(gt=0)
    h: float = Field(gt=0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def scaled(self, sx: float, sy: float) -> "BBox":
        """Rescale under an image resize by factors (sx, sy)."""
        return BBox(x=self.x * sx, y=self.y * sy, w=self.w * sx, h=self.h * sy)

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(x=self.x + dx, y=self.y + dy, w=self.w, h=self.h)

    def hflipped(self, width: int) -> "BBox":
        return BBox(x=width - self.x - self.w, y=self.y, w=self.w, h=self.h)

    def intersects_frame(self, width: int, height: int) -> bool:
        return (
            min(self.x + self.w, width) > max(self.x, 0.0)
            and min(self.y + self.h, height) > max(self.y, 0.0)
        )

    def to_line(self) -> str:
        return ",".join(f"{v:g}" for v in self.as_tuple())


# ── Dataset ─────────────────────────────────────────────────────────────────

class SequenceRecord(BaseModel):
    """One annotated sequence; ``boxes[i]`` is ``None`` when the target is absent."""

    id: str
    frames: list[Path]
    boxes: list[BBox | None]
    split: Literal["train", "test"]
    attributes: list[bool] | None = None
    category: str | None = None
    frame_size: tuple[int, int] | None = None  # (width, height)

    @model_validator(mode="after")
    def _check_counts(self) -> "SequenceRecord":
        if len(self.frames) != len(self.boxes):
            raise ValueError(
                f"sequence {self.id}: {len(self.frames)} frames but {len(self.boxes)} boxes"
            )
        if self.attributes is not None and len(self.attributes) != ATTRIBUTE_COUNT:
            raise ValueError(
                f"sequence {self.id}: expected {ATTRIBUTE_COUNT} attribute flags, "
                f"got {len(self.attributes)}"
            )
        return self

    def __len__(self) -> int:
        return len(self.frames)


# ── Tracking ────────────────────────────────────────────────────────────────

class TrackRun(BaseModel):
    sequence_id: str
    boxes: list[BBox]
    times: list[float]

    @model_validator(mode="after")
    def _check_counts(self) -> "TrackRun":
        if len(self.boxes) != len(self.times):
            raise ValueError(
                f"run {self.sequence_id}: {len(self.boxes)} boxes but {len(self.times)} timings"
            )
        return self

    @property
    def fps(self) -> float | None:
        total = sum(self.times)
        return len(self.times) / total if total > 0 else None


class CurveSet(BaseModel):
    success: list[float]
    precision: list[float]
    norm_precision: list[float]


class SequenceMetrics(BaseModel):
    sequence_id: str
    frames: int
    curves: CurveSet
    success_auc: float
    precision: float
    norm_precision: float
    fps: float | None = None


class AggregateMetrics(BaseModel):
    sequences: int
    curves: CurveSet
    success_auc: float
    precision: float
    norm_precision: float


class MetricReport(BaseModel):
    success_thresholds: list[float]
    precision_thresholds: list[float]
    norm_precision_thresholds: list[float]
    mean: AggregateMetrics
    sequences: list[SequenceMetrics]
    metadata: dict[str, Any] = {}


class ComparisonRow(BaseModel):
    """One line of a results table; deltas are percentage points vs. the reference row."""

    name: str
    success_auc: float
    precision: float
    norm_precision: float
    delta_success_auc: float | None = None
    delta_precision: float | None = None
    delta_norm_precision: float | None = None


# ── Training ────────────────────────────────────────────────────────────────

class EpochStats(BaseModel):
    epoch: int
    loc: float
    exp: float
    color: float
    tv: float
    total: float
    samples: int
    skipped: int = 0
