"""
Synthetic low-light tracking sequences.

Each sequence is a stack of dark noisy frames with one brighter square that
moves linearly and bounces off the frame borders. The square is rendered at
integer pixel positions, so the written ground truth is exact. Output follows
the dataset layout read by ``tae.services.dataset``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import structlog
import torch

from tae.config import SynthConfig
from tae.errors import ConfigError
from tae.models.schemas import ATTRIBUTE_COUNT, BBox
from tae.services.dataset import (
    ATTR_FILE,
    CATEGORIES,
    CATEGORY_FILE,
    GT_FILE,
    IMG_DIR,
    SPLIT_FILES,
)
from tae.services.image_io import write_image

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class SynthSequence:
    id: str
    split: str
    boxes: list[BBox]


def _trajectory(cfg: SynthConfig, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Top-left corners, one per frame, reflected at the borders."""
    size = cfg.target_size
    max_x, max_y = cfg.width - size, cfg.height - size
    x, y = rng.uniform(0, max_x), rng.uniform(0, max_y)
    angle = rng.uniform(0, 2 * np.pi)
    vx, vy = cfg.target_speed * np.cos(angle), cfg.target_speed * np.sin(angle)

    corners = []
    for _ in range(cfg.frames):
        corners.append((int(round(x)), int(round(y))))
        x, y = x + vx, y + vy
        if x < 0 or x > max_x:
            vx = -vx
            x = -x if x < 0 else 2 * max_x - x
        if y < 0 or y > max_y:
            vy = -vy
            y = -y if y < 0 else 2 * max_y - y
        x, y = min(max(x, 0.0), max_x), min(max(y, 0.0), max_y)
    return corners


def render_frame(
    cfg: SynthConfig, corner: tuple[int, int], rng: np.random.Generator
) -> np.ndarray:
    """3×H×W float64 frame: base level plus Gaussian noise, square target on top."""
    frame = np.full((3, cfg.height, cfg.width), cfg.base_intensity, dtype=np.float64)
    x, y = corner
    s = cfg.target_size
    frame[:, y : y + s, x : x + s] = cfg.target_intensity
    frame += rng.normal(0.0, cfg.noise_sigma, size=frame.shape)
    return np.clip(frame, 0.0, 1.0)


def expected_mean_intensity(cfg: SynthConfig) -> float:
    """Noise-free mean frame value."""
    area = cfg.target_size**2 / (cfg.height * cfg.width)
    return cfg.base_intensity + (cfg.target_intensity - cfg.base_intensity) * area


def _write_sequence(
    out: Path, seq_id: str, split: str, cfg: SynthConfig, rng: np.random.Generator
) -> SynthSequence:
    seq_dir = out / seq_id
    img_dir = seq_dir / IMG_DIR
    img_dir.mkdir(parents=True, exist_ok=True)

    boxes = []
    for n, corner in enumerate(_trajectory(cfg, rng), start=1):
        frame = render_frame(cfg, corner, rng)
        write_image(img_dir / f"{n:04d}.png", torch.from_numpy(frame))
        boxes.append(BBox(x=corner[0], y=corner[1], w=cfg.target_size, h=cfg.target_size))

    (seq_dir / GT_FILE).write_text("".join(f"{b.to_line()}\n" for b in boxes), encoding="utf-8")
    flags = rng.integers(0, 2, size=ATTRIBUTE_COUNT)
    (seq_dir / ATTR_FILE).write_text(",".join(str(int(f)) for f in flags) + "\n", encoding="utf-8")
    (seq_dir / CATEGORY_FILE).write_text(CATEGORIES[int(rng.integers(len(CATEGORIES)))] + "\n", encoding="utf-8")
    return SynthSequence(id=seq_id, split=split, boxes=boxes)


def synth_dataset(cfg: SynthConfig, out: Path | str) -> list[SynthSequence]:
    """
    Write ``cfg.train_sequences + cfg.test_sequences`` sequences under *out*.
    Every sequence draws from its own child of ``SeedSequence(cfg.seed)``, so
    a fixed seed yields byte-identical files.
    """
    if cfg.target_size > min(cfg.width, cfg.height):
        raise ConfigError(f"synth.target_size {cfg.target_size} exceeds the {cfg.width}x{cfg.height} frame")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    total = cfg.train_sequences + cfg.test_sequences
    children = np.random.SeedSequence(cfg.seed or 0).spawn(total)

    sequences = []
    for n, child in enumerate(children):
        split = "train" if n < cfg.train_sequences else "test"
        sequences.append(_write_sequence(out, f"seq_{n + 1:04d}", split, cfg, np.random.default_rng(child)))

    for split, name in SPLIT_FILES.items():
        ids = [s.id for s in sequences if s.split == split]
        (out / name).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")

    logger.info("synth_dataset_written", out=str(out), train=cfg.train_sequences, test=cfg.test_sequences, frames=cfg.frames)
    return sequences
