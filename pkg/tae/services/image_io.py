"""
8-bit image codecs (PNG and the portable pixmap family) via Pillow.

Reads give float64 C×H×W tensors in [0, 1] (value / 255); writes round
half-up to the nearest 8-bit level.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import structlog
import torch
from PIL import Image, UnidentifiedImageError
from torch import Tensor

from tae.errors import ImageDecodeError, ShapeMismatchError
from tae.services.tensor_core import DTYPE

logger = structlog.get_logger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm", ".jpg", ".jpeg", ".bmp")


def read_image(path: Path | str) -> Tensor:
    path = Path(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageDecodeError(path, str(exc)) from exc
    return torch.from_numpy(arr.astype(np.float64) / 255.0).permute(2, 0, 1).contiguous()


def image_size(path: Path | str) -> tuple[int, int]:
    """(width, height) from the header only."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            return img.size
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageDecodeError(path, str(exc)) from exc


def to_uint8(values: Tensor) -> np.ndarray:
    """Round half-up to 8-bit levels after clamping to [0, 1]."""
    scaled = values.detach().to(DTYPE).clamp(0.0, 1.0) * 255.0
    return torch.floor(scaled + 0.5).to(torch.uint8).numpy()


def write_image(path: Path | str, image: Tensor) -> Path:
    """Write a 3×H×W (RGB) or 1×H×W (grayscale) tensor."""
    path = Path(path)
    if image.dim() != 3 or image.shape[0] not in (1, 3):
        raise ShapeMismatchError(f"expected 1×H×W or 3×H×W, got {tuple(image.shape)}")
    arr = to_uint8(image)
    if arr.shape[0] == 1:
        img = Image.fromarray(arr[0])
    else:
        img = Image.fromarray(np.ascontiguousarray(arr.transpose(1, 2, 0)))
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)
    return path


def resize_image(image: Tensor, height: int, width: int) -> Tensor:
    """Bilinear resize of a C×H×W tensor."""
    if image.shape[1:] == (height, width):
        return image
    return torch.nn.functional.interpolate(
        image.unsqueeze(0), size=(height, width), mode="bilinear", align_corners=False
    ).squeeze(0)
