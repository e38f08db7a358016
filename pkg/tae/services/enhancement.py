"""
Adaptive RGB multi-curve fusion.

Three pointwise curves per channel (mask-modulated Gamma, logarithmic,
sigmoid) are blended with softmax weights predicted, together with the Gamma
bases, by a small global-parameter CNN. ``enhance_image`` wires the guidance
nets and the predictor into the full pipeline for each ablation mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import structlog
import torch
from torch import Tensor, nn

from tae.config import EngineConfig, Mode
from tae.errors import DomainError, ShapeMismatchError
from tae.services.guidance import (
    EnhancementMask,
    GuidanceNets,
    ObjectnessMap,
    mask_forward,
    objectness_forward,
)
from tae.services.tensor_core import (
    DTYPE,
    AffineLayer,
    ConvLayer,
    Tape,
    affine_forward,
    channel_softmax,
    conv2d_forward,
    elementwise,
    global_avg_pool,
    leaky_relu,
)

logger = structlog.get_logger(__name__)

GAMMA_EPS = 1e-3
LOG_GAIN = 10.0
SIGMOID_GAIN = 10.0
MIN_PREDICTOR_SIZE = 8

_INV_LOG11 = 1.0 / math.log(1.0 + LOG_GAIN)


@dataclass(frozen=True)
class CurveParams:
    """Gamma bases ``alpha`` (3,) in (0, 1] and fusion logits (3 channels × 3 curves)."""

    alpha: Tensor
    fusion_logits: Tensor

    def weights(self, tape: Tape | None = None) -> Tensor:
        return channel_softmax(self.fusion_logits, tape)


@dataclass(frozen=True)
class EnhancementResult:
    enhanced: Tensor  # 3×H×W in [0, 1]
    objectness: ObjectnessMap
    mask: EnhancementMask
    params: CurveParams


# ── Curves ──────────────────────────────────────────────────────────────────

def gamma_curve(
    channel: Tensor,
    alpha: Tensor | float,
    mask: Tensor,
    tape: Tape | None = None,
) -> Tensor:
    """``(I + ε) ** (α ** M)`` pixel-wise; the exponent stays within [α, 1]."""
    alpha_t = alpha if isinstance(alpha, Tensor) else torch.tensor(float(alpha), dtype=DTYPE)
    if bool(((alpha_t <= 0) | (alpha_t > 1)).any()):
        raise DomainError(f"gamma base must lie in (0, 1], got {alpha_t.detach().tolist()}")
    log_alpha = elementwise("log", alpha_t, tape=tape)
    exponent = elementwise("exp", elementwise("mul", mask, log_alpha, tape), tape=tape)
    base = elementwise("add", channel, GAMMA_EPS, tape)
    return elementwise("pow", base, exponent, tape)


def log_curve(channel: Tensor, tape: Tape | None = None) -> Tensor:
    """``log(1 + 10 I) / log(11)``."""
    scaled = elementwise("add", elementwise("mul", channel, LOG_GAIN, tape), 1.0, tape)
    return elementwise("mul", elementwise("log", scaled, tape=tape), _INV_LOG11, tape)


def sigmoid_curve(channel: Tensor, tape: Tape | None = None) -> Tensor:
    """``1 / (1 + exp(-10 (I - 0.5)))``."""
    centered = elementwise("mul", elementwise("sub", channel, 0.5, tape), SIGMOID_GAIN, tape)
    return elementwise("sigmoid", centered, tape=tape)


# ── Global parameter predictor ──────────────────────────────────────────────

class PredictorNet(nn.Module):
    """
    Three stride-2 convs, global average pooling and a zero-initialized affine
    head emitting 9 fusion logits followed by 3 pre-alpha values.
    With ``alpha_source="global"`` the bases come from a free per-channel
    parameter instead of the head.
    """

    def __init__(
        self,
        channels: int = 16,
        leaky_slope: float = 0.1,
        alpha_source: str = "predicted",
        *,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.leaky_slope = leaky_slope
        self.alpha_source = alpha_source
        self.convs = nn.ModuleList(
            [
                ConvLayer(3, channels, 3, 2, 1, leaky_slope=leaky_slope, generator=generator),
                ConvLayer(channels, channels, 3, 2, 1, leaky_slope=leaky_slope, generator=generator),
                ConvLayer(channels, channels, 3, 2, 1, leaky_slope=leaky_slope, generator=generator),
            ]
        )
        self.head = AffineLayer(channels, 12, zero_init=True)
        self.global_pre_alpha = nn.Parameter(torch.zeros(3, dtype=DTYPE))

    def forward(self, image: Tensor, tape: Tape | None = None) -> CurveParams:
        return predict_global_params(image, self, tape)


def predict_global_params(image: Tensor, net: PredictorNet, tape: Tape | None = None) -> CurveParams:
    if image.dim() != 3 or image.shape[0] != 3:
        raise ShapeMismatchError(f"expected a 3×H×W image, got {tuple(image.shape)}")
    if image.shape[1] < MIN_PREDICTOR_SIZE or image.shape[2] < MIN_PREDICTOR_SIZE:
        raise ShapeMismatchError(
            f"image {tuple(image.shape)} too small for the predictor; "
            f"need H, W >= {MIN_PREDICTOR_SIZE}"
        )
    x = image
    for layer in net.convs:
        x = leaky_relu(conv2d_forward(x, layer, tape), net.leaky_slope, tape)
    out = affine_forward(global_avg_pool(x, tape), net.head, tape)

    pre_alpha = net.global_pre_alpha if net.alpha_source == "global" else out[9:]
    alpha = elementwise("sigmoid", pre_alpha, tape=tape)
    return CurveParams(alpha=alpha, fusion_logits=out[:9].reshape(3, 3))


# ── Fusion ──────────────────────────────────────────────────────────────────

def _fuse(
    image: Tensor,
    mask: Tensor,
    alpha: Tensor,
    weights: Tensor,
    tape: Tape | None,
    clamp: bool,
) -> Tensor:
    channels = []
    for c in range(3):
        ic, mc = image[c : c + 1], mask[c : c + 1]
        curves = (gamma_curve(ic, alpha[c], mc, tape), log_curve(ic, tape), sigmoid_curve(ic, tape))
        acc = elementwise("mul", curves[0], weights[c, 0], tape)
        for k in (1, 2):
            acc = elementwise("add", acc, elementwise("mul", curves[k], weights[c, k], tape), tape)
        channels.append(acc)
    fused = torch.cat(channels, dim=0)
    return elementwise("clamp", fused, (0.0, 1.0), tape) if clamp else fused


def fuse_curves(
    image: Tensor,
    mask: EnhancementMask,
    params: CurveParams,
    tape: Tape | None = None,
    *,
    clamp: bool = True,
) -> Tensor:
    """Per channel: softmax the logits, blend the three curves, clamp to [0, 1]."""
    if image.dim() != 3 or image.shape[0] != 3 or mask.shape != image.shape:
        raise ShapeMismatchError(f"image {tuple(image.shape)} vs mask {tuple(mask.shape)}")
    if params.alpha.shape != (3,) or params.fusion_logits.shape != (3, 3):
        raise ShapeMismatchError(
            f"curve params must be (3,) and (3, 3), got {tuple(params.alpha.shape)} "
            f"and {tuple(params.fusion_logits.shape)}"
        )
    return _fuse(image, mask, params.alpha, params.weights(tape), tape, clamp)


_GAMMA_ONLY = torch.tensor([[1.0, 0.0, 0.0]] * 3, dtype=DTYPE)


def enhance_image(
    image: Tensor,
    guidance: GuidanceNets,
    predictor: PredictorNet,
    mode: Mode = "TA+MC",
    tape: Tape | None = None,
) -> EnhancementResult:
    """
    Run the pipeline in one of the ablation modes:

    - ``baseline``: single global Gamma curve (M ≡ 1, one-hot Gamma weights)
    - ``TA``: mask-modulated Gamma only
    - ``TA+MC``: full three-curve fusion
    """
    if mode == "baseline":
        # Guidance output is reported but takes no part in the result.
        with torch.no_grad():
            _, objectness = objectness_forward(image, guidance)
        mask = torch.ones_like(image)
    else:
        features, objectness = objectness_forward(image, guidance, tape)
        mask = mask_forward(objectness, features, guidance, tape)

    params = predict_global_params(image, predictor, tape)
    if mode == "TA+MC":
        enhanced = fuse_curves(image, mask, params, tape)
    else:
        enhanced = _fuse(image, mask, params.alpha, _GAMMA_ONLY, tape, clamp=True)
    return EnhancementResult(enhanced=enhanced, objectness=objectness, mask=mask, params=params)


# ── Construction / inference ────────────────────────────────────────────────

def build_networks(cfg: EngineConfig, seed: int | None = None) -> tuple[GuidanceNets, PredictorNet]:
    """Fresh networks, initialized deterministically from *seed* (default ``cfg.seed``)."""
    generator = torch.Generator().manual_seed(cfg.seed if seed is None else seed)
    guidance = GuidanceNets(cfg.guidance.channels, cfg.guidance.leaky_slope, generator=generator)
    predictor = PredictorNet(
        cfg.enhancement.predictor_channels,
        cfg.guidance.leaky_slope,
        cfg.enhancement.alpha_source,
        generator=generator,
    )
    return guidance, predictor


class Enhancer:
    """
    Frozen inference wrapper. Forward passes never touch parameters, so one
    instance can be shared by worker threads.
    """

    def __init__(self, guidance: GuidanceNets, predictor: PredictorNet, mode: Mode = "TA+MC") -> None:
        self.guidance = guidance.eval().requires_grad_(False)
        self.predictor = predictor.eval().requires_grad_(False)
        self.mode = mode

    def run(self, image: Tensor) -> EnhancementResult:
        with torch.no_grad():
            return enhance_image(image, self.guidance, self.predictor, self.mode)

    def __call__(self, image: Tensor) -> Tensor:
        return self.run(image).enhanced
