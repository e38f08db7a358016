"""
Target-aware enhancement guidance.

Ground-truth boxes become Gaussian soft labels; a small full-resolution CNN
predicts a per-pixel objectness map from the frame, and a second 3-layer CNN
turns (objectness, features) into a 3-channel enhancement mask.

Pixel convention: pixel centers sit on integer coordinates and ``(i, j)`` is
``(column, row)``, so ``i`` pairs with the box's horizontal center.
"""

from __future__ import annotations

from typing import Literal

import structlog
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from tae.errors import ShapeMismatchError
from tae.models.schemas import BBox
from tae.services.tensor_core import (
    DTYPE,
    ConvLayer,
    Tape,
    conv2d_forward,
    elementwise,
    leaky_relu,
)

logger = structlog.get_logger(__name__)

BCE_EPS = 1e-7
DICE_EPS = 1e-8

# Shapes: SoftLabelMap / ObjectnessMap are 1×H×W, EnhancementMask is 3×H×W.
SoftLabelMap = Tensor
ObjectnessMap = Tensor
EnhancementMask = Tensor


# ── Soft labels ─────────────────────────────────────────────────────────────

def box_center(b: BBox) -> tuple[float, float]:
    return (b.x + b.w / 2, b.y + b.h / 2)


def gaussian_soft_label(
    b: BBox,
    height: int,
    width: int,
    *,
    zero_outside_box: bool = False,
) -> SoftLabelMap:
    """
    Gaussian bump with ``sigma = (w/2, h/2)`` centered on the box, evaluated at
    every pixel center of an H×W frame. Built as the outer product of two 1-D
    Gaussians, so the map is exactly rank one.
    """
    if height < 1 or width < 1:
        raise ShapeMismatchError(f"soft label needs H, W >= 1, got {height}x{width}")
    cx, cy = box_center(b)
    sigma_x, sigma_y = b.w / 2, b.h / 2

    cols = torch.arange(width, dtype=DTYPE)
    rows = torch.arange(height, dtype=DTYPE)
    g_x = torch.exp(-0.5 * ((cols - cx) / sigma_x) ** 2)
    g_y = torch.exp(-0.5 * ((rows - cy) / sigma_y) ** 2)
    if zero_outside_box:
        g_x = g_x * ((cols >= b.x) & (cols <= b.x + b.w))
        g_y = g_y * ((rows >= b.y) & (rows <= b.y + b.h))
    return torch.outer(g_y, g_x).clamp(0.0, 1.0).unsqueeze(0)


# ── Networks ────────────────────────────────────────────────────────────────

class GuidanceNets(nn.Module):
    """
    Feature extractor (3 conv, ``channels`` wide), objectness head (1 conv +
    sigmoid) and mask head (3 conv on ``channels + 1`` inputs, final
    sigmoid). Every layer is 3×3 / stride 1 / pad 1, so H×W is preserved.
    Both heads start at zero, giving O ≡ 0.5 and M ≡ 0.5.
    """

    def __init__(
        self,
        channels: int = 16,
        leaky_slope: float = 0.1,
        *,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.channels = channels
        self.leaky_slope = leaky_slope

        def conv(cin: int, cout: int, zero: bool = False) -> ConvLayer:
            return ConvLayer(cin, cout, 3, 1, 1, zero_init=zero, leaky_slope=leaky_slope, generator=generator)

        self.features = nn.ModuleList([conv(3, channels), conv(channels, channels), conv(channels, channels)])
        self.objectness_head = conv(channels, 1, zero=True)
        self.mask_head = nn.ModuleList(
            [conv(channels + 1, channels), conv(channels, channels), conv(channels, 3, zero=True)]
        )

    def forward(self, image: Tensor, tape: Tape | None = None) -> tuple[Tensor, ObjectnessMap, EnhancementMask]:
        features, objectness = objectness_forward(image, self, tape)
        return features, objectness, mask_forward(objectness, features, self, tape)


def objectness_forward(
    image: Tensor, nets: GuidanceNets, tape: Tape | None = None
) -> tuple[Tensor, ObjectnessMap]:
    """Return the shared feature map F (C×H×W) and the objectness map O (1×H×W)."""
    if image.dim() != 3 or image.shape[0] != 3:
        raise ShapeMismatchError(f"expected a 3×H×W image, got {tuple(image.shape)}")
    x = image
    for layer in nets.features:
        x = leaky_relu(conv2d_forward(x, layer, tape), nets.leaky_slope, tape)
    logits = conv2d_forward(x, nets.objectness_head, tape)
    return x, elementwise("sigmoid", logits, tape=tape)


def mask_forward(
    objectness: ObjectnessMap,
    features: Tensor,
    nets: GuidanceNets,
    tape: Tape | None = None,
) -> EnhancementMask:
    """Mask head over concat(O, F); sigmoid keeps the mask inside [0, 1]."""
    if objectness.dim() != 3 or objectness.shape[0] != 1:
        raise ShapeMismatchError(f"objectness must be 1×H×W, got {tuple(objectness.shape)}")
    if features.dim() != 3 or features.shape[1:] != objectness.shape[1:]:
        raise ShapeMismatchError(
            f"features {tuple(features.shape)} and objectness {tuple(objectness.shape)} differ spatially"
        )
    x = torch.cat([objectness, features], dim=0)
    last = len(nets.mask_head) - 1
    for n, layer in enumerate(nets.mask_head):
        x = conv2d_forward(x, layer, tape)
        if n < last:
            x = leaky_relu(x, nets.leaky_slope, tape)
    return elementwise("sigmoid", x, tape=tape)


# ── Localization loss ───────────────────────────────────────────────────────

def loc_loss(
    objectness: ObjectnessMap,
    soft_label: SoftLabelMap,
    reduction: Literal["mean", "sum"] = "mean",
    tape: Tape | None = None,
) -> Tensor:
    """
    Cross-entropy on the ε-clamped map plus the Dice term
    ``1 - 2ΣO·Ô / (ΣO + ΣÔ + ε_d)`` on the raw map.
    """
    if objectness.shape != soft_label.shape:
        raise ShapeMismatchError(
            f"objectness {tuple(objectness.shape)} vs soft label {tuple(soft_label.shape)}"
        )
    clamped = objectness.clamp(BCE_EPS, 1.0 - BCE_EPS)
    bce = F.binary_cross_entropy(clamped, soft_label, reduction=reduction)
    overlap = (objectness * soft_label).sum()
    dice = 1.0 - 2.0 * overlap / (objectness.sum() + soft_label.sum() + DICE_EPS)
    out = bce + dice
    if tape is not None:
        tape.record("loc_loss", (objectness, soft_label), out)
    return out
