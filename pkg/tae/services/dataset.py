"""
Sequence dataset ingestion (OTB-style layout).

    <root>/train.txt, <root>/test.txt      one sequence id per line
    <root>/<seq>/img/0001.png ...          frames, ordered by numeric file stem
    <root>/<seq>/groundtruth_rect.txt      one "x,y,w,h" per frame (tab also accepted)
    <root>/<seq>/attributes.txt            optional, 12 comma-separated 0/1 flags
    <root>/<seq>/category.txt              optional, target category name

A ground-truth line of zeros or NaNs marks the target as absent in that frame.
"""

from __future__ import annotations

import math
import re
from pathlib import Path
from typing import Literal

import structlog
from pydantic import ValidationError

from tae.errors import DatasetError, ImageDecodeError
from tae.models.schemas import ATTRIBUTE_COUNT, BBox, SequenceRecord
from tae.services.image_io import IMAGE_SUFFIXES, image_size

logger = structlog.get_logger(__name__)

Split = Literal["train", "test"]

IMG_DIR = "img"
GT_FILE = "groundtruth_rect.txt"
ATTR_FILE = "attributes.txt"
CATEGORY_FILE = "category.txt"
SPLIT_FILES: dict[str, str] = {"train": "train.txt", "test": "test.txt"}

CATEGORIES = (
    "People", "Tricycle", "Bicycle", "Bus", "Truck",
    "Awning-tricycle", "Motor", "Car", "Van",
)

_GT_SEP = re.compile(r"[,\t]\s*|\s+")


def parse_box_line(line: str, *, sequence: str | None = None, line_no: int | None = None) -> BBox | None:
    parts = [p for p in _GT_SEP.split(line.strip()) if p]
    if len(parts) != 4:
        raise DatasetError(f"expected 4 values, got {len(parts)}: {line.strip()!r}", sequence, line_no)
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError as exc:
        raise DatasetError(f"non-numeric box {line.strip()!r}", sequence, line_no) from exc
    if any(math.isnan(v) for v in (x, y, w, h)) or (x, y, w, h) == (0, 0, 0, 0):
        return None
    if w <= 0 or h <= 0:
        raise DatasetError(f"degenerate box {line.strip()!r}", sequence, line_no)
    return BBox(x=x, y=y, w=w, h=h)


def _frame_key(path: Path) -> tuple[int, str]:
    return (int(path.stem), path.name) if path.stem.isdigit() else (10**12, path.name)


def list_frames(img_dir: Path) -> list[Path]:
    frames = [p for p in img_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]
    return sorted(frames, key=_frame_key)


def _read_attributes(path: Path, sequence: str) -> list[bool]:
    text = path.read_text(encoding="utf-8").strip()
    flags = [f.strip() for f in re.split(r"[,\s]+", text) if f.strip()]
    if len(flags) != ATTRIBUTE_COUNT or any(f not in ("0", "1") for f in flags):
        raise DatasetError(f"{ATTR_FILE} must hold {ATTRIBUTE_COUNT} 0/1 flags", sequence, 1)
    return [f == "1" for f in flags]


def load_sequence(seq_dir: Path, split: Split) -> SequenceRecord:
    seq_id = seq_dir.name
    gt_path = seq_dir / GT_FILE
    img_dir = seq_dir / IMG_DIR
    if not gt_path.is_file():
        raise DatasetError(f"missing {GT_FILE}", seq_id)
    if not img_dir.is_dir():
        raise DatasetError(f"missing {IMG_DIR}/ directory", seq_id)

    frames = list_frames(img_dir)
    lines = [ln for ln in gt_path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(frames) != len(lines):
        raise DatasetError(
            f"count mismatch: {len(frames)} frames but {len(lines)} ground-truth lines",
            seq_id,
            min(len(frames), len(lines)) + 1,
        )
    if not frames:
        raise DatasetError("sequence has no frames", seq_id)

    sizes = []
    for n, frame in enumerate(frames, start=1):
        try:
            sizes.append(image_size(frame))
        except ImageDecodeError as exc:
            raise DatasetError(f"unreadable frame {frame.name}: {exc}", seq_id, n) from exc
    width, height = sizes[0]

    boxes: list[BBox | None] = []
    for n, line in enumerate(lines, start=1):
        box = parse_box_line(line, sequence=seq_id, line_no=n)
        if box is not None and not box.intersects_frame(width, height):
            raise DatasetError(f"box {line.strip()!r} lies outside the {width}x{height} frame", seq_id, n)
        boxes.append(box)

    attr_path = seq_dir / ATTR_FILE
    cat_path = seq_dir / CATEGORY_FILE
    try:
        return SequenceRecord(
            id=seq_id,
            frames=frames,
            boxes=boxes,
            split=split,
            attributes=_read_attributes(attr_path, seq_id) if attr_path.is_file() else None,
            category=cat_path.read_text(encoding="utf-8").strip() or None if cat_path.is_file() else None,
            frame_size=(width, height),
        )
    except ValidationError as exc:
        raise DatasetError(str(exc.errors()[0]["msg"]), seq_id) from exc


def load_dataset(root: Path | str, split: Split) -> list[SequenceRecord]:
    """Validated records for one split, sorted by sequence id."""
    root = Path(root)
    split_file = root / SPLIT_FILES[split]
    if not split_file.is_file():
        raise DatasetError(f"missing split list {split_file}")
    ids = sorted({ln.strip() for ln in split_file.read_text(encoding="utf-8").splitlines() if ln.strip()})
    records = []
    for seq_id in ids:
        seq_dir = root / seq_id
        if not seq_dir.is_dir():
            raise DatasetError(f"listed in {split_file.name} but not found under {root}", seq_id)
        records.append(load_sequence(seq_dir, split))
    logger.info("dataset_loaded", root=str(root), split=split, sequences=len(records))
    return records


def filter_by_attribute(records: list[SequenceRecord], index: int) -> list[SequenceRecord]:
    if not 0 <= index < ATTRIBUTE_COUNT:
        raise DatasetError(f"attribute index {index} outside 0..{ATTRIBUTE_COUNT - 1}")
    return [r for r in records if r.attributes is not None and r.attributes[index]]
