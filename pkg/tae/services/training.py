"""
Training loop for the guidance nets and the curve predictor.

- ``SampleLoader`` decodes and resizes frames on worker threads and yields
  them in submission order through a bounded prefetch window
- ``train_epoch`` runs one pass: forward, weighted losses, tape backward,
  one AdamW step per batch
- ``Trainer`` owns the networks and optimizer across epochs, writes a
  checkpoint per epoch plus ``last.tae`` and the ``losses.csv`` log
"""

from __future__ import annotations

import csv
import math
from collections import deque
from collections.abc import Iterable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import islice
from pathlib import Path

import numpy as np
import structlog
import torch
from torch import Tensor, nn

from tae.config import EngineConfig, Mode, dump_config
from tae.errors import ImageDecodeError, ShapeMismatchError, TrainingError
from tae.models.schemas import BBox, EpochStats, SequenceRecord
from tae.services.checkpoint import capture, save_checkpoint
from tae.services.enhancement import GuidanceNets, PredictorNet, build_networks, enhance_image
from tae.services.guidance import gaussian_soft_label, loc_loss
from tae.services.image_io import read_image, resize_image
from tae.services.losses import color_loss, exposure_loss, total_loss, tv_loss
from tae.services.optimizer import AdamW
from tae.services.tensor_core import Tape, backward, reduce_mean

logger = structlog.get_logger(__name__)

LOSS_COLUMNS = ("epoch", "loc", "exp", "color", "tv", "total")
LOSSES_CSV = "losses.csv"
LAST_CHECKPOINT = "last.tae"


# ── Samples ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class FrameRef:
    path: Path
    box: BBox
    frame_size: tuple[int, int] | None = None  # (width, height)


@dataclass(frozen=True)
class TrainingSample:
    image: Tensor  # 3×S×S
    box: BBox
    source: Path | None = None


@dataclass(frozen=True)
class SkippedSample:
    source: Path
    reason: str


def training_frames(records: Iterable[SequenceRecord], frame_stride: int = 1) -> list[FrameRef]:
    """Every ``frame_stride``-th annotated frame; frames with an absent target are left out."""
    refs = []
    for record in records:
        for path, box in islice(zip(record.frames, record.boxes), 0, None, frame_stride):
            if box is not None:
                refs.append(FrameRef(path, box, record.frame_size))
    return refs


def prepare_sample(image: Tensor, box: BBox, input_size: int, *, hflip: bool = False) -> TrainingSample:
    """Resize to ``input_size``² and rescale the box by the same factors: (x, w)·W'/W, (y, h)·H'/H."""
    if image.dim() != 3 or image.shape[0] != 3:
        raise ShapeMismatchError(f"expected a 3×H×W image, got {tuple(image.shape)}")
    _, height, width = image.shape
    resized = resize_image(image, input_size, input_size)
    scaled = box.scaled(input_size / width, input_size / height)
    if hflip:
        resized = torch.flip(resized, dims=(2,))
        scaled = scaled.hflipped(input_size)
    return TrainingSample(image=resized, box=scaled)


class SampleLoader:
    """Worker-thread frame decoding; results come back in submission order."""

    def __init__(self, frames: Sequence[FrameRef], input_size: int, workers: int = 2, prefetch: int = 16) -> None:
        self.frames = list(frames)
        self.input_size = input_size
        self.workers = workers
        self.prefetch = prefetch

    def __len__(self) -> int:
        return len(self.frames)

    def _load(self, index: int, flip: bool) -> TrainingSample | SkippedSample:
        ref = self.frames[index]
        try:
            sample = prepare_sample(read_image(ref.path), ref.box, self.input_size, hflip=flip)
        except (ImageDecodeError, ShapeMismatchError, ValueError) as exc:
            return SkippedSample(ref.path, str(exc))
        return TrainingSample(image=sample.image, box=sample.box, source=ref.path)

    def iterate(
        self, order: Sequence[int], flips: Sequence[bool] | None = None
    ) -> Iterator[TrainingSample | SkippedSample]:
        jobs = iter(zip(order, flips if flips is not None else [False] * len(order)))
        with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="tae-loader") as pool:
            pending = deque(pool.submit(self._load, i, f) for i, f in islice(jobs, self.prefetch))
            while pending:
                future = pending.popleft()
                nxt = next(jobs, None)
                if nxt is not None:
                    pending.append(pool.submit(self._load, *nxt))
                yield future.result()


def epoch_order(n: int, seed: int, epoch: int, *, hflip: bool = False) -> tuple[list[int], list[bool]]:
    """Seeded shuffle and flip draws for one epoch."""
    rng = np.random.default_rng([seed, epoch])
    order = [int(i) for i in rng.permutation(n)]
    flips = [bool(f) for f in rng.random(n) < 0.5] if hflip else [False] * n
    return order, flips


# ── Parameters / schedule ───────────────────────────────────────────────────

def trainable_parameters(guidance: GuidanceNets, predictor: PredictorNet, mode: Mode) -> list[nn.Parameter]:
    """Baseline trains the predictor only; the guidance nets stay at initialization."""
    params = list(predictor.parameters())
    if mode != "baseline":
        params = list(guidance.parameters()) + params
    return params


def scheduled_lr(base_lr: float, epoch: int, epochs: int, schedule: str) -> float:
    if schedule == "cosine" and epochs > 0:
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))
    return base_lr


# ── Epoch ───────────────────────────────────────────────────────────────────

def _sample_losses(
    sample: TrainingSample,
    guidance: GuidanceNets,
    predictor: PredictorNet,
    cfg: EngineConfig,
    tape: Tape,
) -> dict[str, Tensor]:
    mode = cfg.train.mode
    result = enhance_image(sample.image, guidance, predictor, mode, tape)
    if mode == "baseline":
        loc = sample.image.new_zeros(())
    else:
        _, height, width = sample.image.shape
        label = gaussian_soft_label(sample.box, height, width, zero_outside_box=cfg.guidance.zero_outside_box)
        loc = loc_loss(result.objectness, label, cfg.guidance.loc_reduction, tape)
    exp = exposure_loss(result.enhanced, cfg.train.exposure, tape)
    color = color_loss(result.enhanced, tape)
    tv = tv_loss(result.mask, tape)
    total = total_loss(loc, exp, color, tv, cfg.train.loss_weights, tape)
    return {"loc": loc, "exp": exp, "color": color, "tv": tv, "total": total}


def _batches(
    samples: Iterable[TrainingSample | SkippedSample], batch_size: int
) -> Iterator[tuple[list[TrainingSample], int]]:
    batch: list[TrainingSample] = []
    skipped = 0
    for sample in samples:
        if isinstance(sample, SkippedSample):
            logger.warning("sample_skipped", path=str(sample.source), reason=sample.reason)
            skipped += 1
            continue
        if not bool(torch.isfinite(sample.image).all()):
            logger.warning("sample_skipped", path=str(sample.source), reason="non-finite pixel values")
            skipped += 1
            continue
        batch.append(sample)
        if len(batch) == batch_size:
            yield batch, skipped
            batch, skipped = [], 0
    if batch or skipped:
        yield batch, skipped


def train_epoch(
    samples: Iterable[TrainingSample | SkippedSample],
    guidance: GuidanceNets,
    predictor: PredictorNet,
    cfg: EngineConfig,
    optimizer: AdamW,
    epoch: int = 0,
) -> EpochStats:
    """
    One pass over *samples*. Each batch gets its own tape; the batch loss is the
    mean of per-sample totals. Returned components are per-sample means.
    """
    params = [p for group in optimizer.param_groups for p in group["params"]]
    guidance.train()
    predictor.train()

    sums = dict.fromkeys(LOSS_COLUMNS[1:], 0.0)
    seen = skipped = 0
    for batch, batch_skipped in _batches(samples, cfg.train.batch_size):
        skipped += batch_skipped
        if not batch:
            continue
        optimizer.zero_grad(set_to_none=True)
        tape = Tape()
        per_sample = [_sample_losses(s, guidance, predictor, cfg, tape) for s in batch]
        loss = reduce_mean(torch.stack([terms["total"] for terms in per_sample]), tape)
        backward(tape, loss, params)
        optimizer.step()

        for terms in per_sample:
            for name, value in terms.items():
                sums[name] += float(value.detach())
        seen += len(batch)

    if seen == 0:
        raise TrainingError(f"epoch {epoch}: every sample was skipped ({skipped} skipped)")
    stats = EpochStats(epoch=epoch, **{k: v / seen for k, v in sums.items()}, samples=seen, skipped=skipped)
    logger.info(
        "epoch_complete",
        epoch=epoch,
        total=round(stats.total, 6),
        loc=round(stats.loc, 6),
        exp=round(stats.exp, 6),
        samples=seen,
        skipped=skipped,
    )
    return stats


# ── Run ─────────────────────────────────────────────────────────────────────

class Trainer:
    """Networks, optimizer and output directory for one training run."""

    def __init__(self, cfg: EngineConfig, out_dir: Path | str) -> None:
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.guidance, self.predictor = build_networks(cfg)
        self.optimizer = AdamW(
            trainable_parameters(self.guidance, self.predictor, cfg.train.mode),
            lr=cfg.train.learning_rate,
            weight_decay=cfg.train.weight_decay,
        )
        self.history: list[EpochStats] = []

    @property
    def seed(self) -> int:
        return self.cfg.train.seed if self.cfg.train.seed is not None else self.cfg.seed

    def save(self, name: str) -> Path:
        ckpt = capture(self.guidance, self.predictor, self.cfg, self.optimizer)
        return save_checkpoint(self.out_dir / name, ckpt)

    def _write_losses(self) -> Path:
        path = self.out_dir / LOSSES_CSV
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOSS_COLUMNS)
            for s in self.history:
                writer.writerow([s.epoch, *(f"{getattr(s, c):.10g}" for c in LOSS_COLUMNS[1:])])
        return path

    def fit(self, records: Sequence[SequenceRecord]) -> list[EpochStats]:
        train_cfg = self.cfg.train
        self.out_dir.mkdir(parents=True, exist_ok=True)
        dump_config(self.cfg, self.out_dir / "config.yaml")

        loader = SampleLoader(
            training_frames(records, train_cfg.frame_stride),
            train_cfg.input_size,
            workers=train_cfg.loader_workers,
            prefetch=train_cfg.prefetch,
        )
        if train_cfg.epochs > 0 and len(loader) == 0:
            raise TrainingError("no annotated training frames")
        logger.info(
            "training_started",
            mode=train_cfg.mode,
            epochs=train_cfg.epochs,
            frames=len(loader),
            out=str(self.out_dir),
        )

        for epoch in range(1, train_cfg.epochs + 1):
            lr = scheduled_lr(train_cfg.learning_rate, epoch - 1, train_cfg.epochs, train_cfg.lr_schedule)
            self.optimizer.set_lr(lr)
            order, flips = epoch_order(len(loader), self.seed, epoch, hflip=train_cfg.hflip)
            stats = train_epoch(
                loader.iterate(order, flips), self.guidance, self.predictor, self.cfg, self.optimizer, epoch
            )
            self.history.append(stats)
            self.save(f"epoch_{epoch:03d}.tae")
            self._write_losses()

        self._write_losses()
        self.save(LAST_CHECKPOINT)
        logger.info("training_complete", epochs=len(self.history), out=str(self.out_dir))
        return self.history


def train(cfg: EngineConfig, records: Sequence[SequenceRecord], out_dir: Path | str) -> list[EpochStats]:
    return Trainer(cfg, out_dir).fit(records)
