"""
Unsupervised enhancement losses and the weighted training objective.

- exposure: mean |patch luminance - E| over non-overlapping patches
- color: squared differences between global channel means (gray-world)
- tv: squared forward differences of the enhancement mask
"""

from __future__ import annotations

import torch
from torch import Tensor

from tae.config import ExposureConfig, LossWeights
from tae.errors import ShapeMismatchError
from tae.services.tensor_core import Tape

_CHANNEL_PAIRS = ((0, 1), (0, 2), (1, 2))


def _recorded(tape: Tape | None, op: str, inputs: tuple[Tensor, ...], out: Tensor) -> Tensor:
    return out if tape is None else tape.record(op, inputs, out)


def exposure_loss(enhanced: Tensor, cfg: ExposureConfig | None = None, tape: Tape | None = None) -> Tensor:
    """Trailing partial patches are dropped; an image smaller than one patch is one global patch."""
    cfg = cfg or ExposureConfig()
    if enhanced.dim() != 3:
        raise ShapeMismatchError(f"expected C×H×W, got {tuple(enhanced.shape)}")
    # offset first: a constant image at E is then all exact zeros
    deviation = (enhanced - cfg.target_E).mean(dim=0)
    height, width = deviation.shape
    p = cfg.patch
    if height < p or width < p:
        patch_means = deviation.mean().reshape(1)
    else:
        rows, cols = height // p, width // p
        patches = deviation[: rows * p, : cols * p].reshape(rows, p, cols, p)
        patch_means = patches.mean(dim=(1, 3))
    out = patch_means.abs().mean()
    return _recorded(tape, "exposure_loss", (enhanced,), out)


def color_loss(enhanced: Tensor, tape: Tape | None = None) -> Tensor:
    if enhanced.dim() != 3 or enhanced.shape[0] != 3:
        raise ShapeMismatchError(f"expected 3×H×W, got {tuple(enhanced.shape)}")
    means = enhanced.mean(dim=(1, 2))
    out = sum((means[p] - means[q]) ** 2 for p, q in _CHANNEL_PAIRS)
    return _recorded(tape, "color_loss", (enhanced,), out)


def tv_loss(mask: Tensor, tape: Tape | None = None) -> Tensor:
    """
    Mean squared horizontal difference plus mean squared vertical difference.
    A direction with no valid positions (extent < 2) contributes 0.
    """
    if mask.dim() != 3:
        raise ShapeMismatchError(f"expected C×H×W, got {tuple(mask.shape)}")
    out = mask.new_zeros(())
    if mask.shape[2] >= 2:
        out = out + (mask[:, :, 1:] - mask[:, :, :-1]).pow(2).mean()
    if mask.shape[1] >= 2:
        out = out + (mask[:, 1:, :] - mask[:, :-1, :]).pow(2).mean()
    return _recorded(tape, "tv_loss", (mask,), out)


def total_loss(
    loc: Tensor,
    exp: Tensor,
    color: Tensor,
    tv: Tensor,
    weights: LossWeights | None = None,
    tape: Tape | None = None,
) -> Tensor:
    w = weights or LossWeights()
    out = w.lambda_loc * loc + w.lambda_1 * exp + w.lambda_2 * color + w.lambda_3 * tv
    return _recorded(tape, "total_loss", (loc, exp, color, tv), out)
