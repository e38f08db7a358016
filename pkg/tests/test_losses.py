import pytest
import torch

from tae.config import ExposureConfig, LossWeights
from tae.errors import ShapeMismatchError
from tae.services.losses import color_loss, exposure_loss, total_loss, tv_loss
from tae.services.tensor_core import DTYPE, as_tensor, grad_check


def _channels(r: float, g: float, b: float, h: int = 4, w: int = 4) -> torch.Tensor:
    return torch.stack([torch.full((h, w), v, dtype=DTYPE) for v in (r, g, b)])


# ── exposure ────────────────────────────────────────────────────────────────

def test_exposure_two_patches():
    image = torch.full((3, 16, 32), 0.5, dtype=DTYPE)
    image[:, :, 16:] = 0.7
    assert float(exposure_loss(image)) == pytest.approx(0.1, abs=1e-12)


def test_exposure_at_target_is_zero():
    assert float(exposure_loss(torch.full((3, 32, 32), 0.6, dtype=DTYPE))) == 0.0
    assert float(exposure_loss(torch.full((3, 48, 40), 0.6, dtype=DTYPE), ExposureConfig(patch=8))) == 0.0


def test_exposure_drops_partial_patches():
    image = torch.full((3, 20, 20), 0.6, dtype=DTYPE)
    image[:, 16:, :] = 0.0
    image[:, :, 16:] = 0.0
    assert float(exposure_loss(image)) == 0.0


def test_exposure_small_image_is_one_global_patch():
    image = _channels(0.1, 0.2, 0.3, 5, 7)
    assert float(exposure_loss(image)) == pytest.approx(0.4, abs=1e-12)


def test_exposure_custom_patch_and_target():
    image = torch.full((3, 4, 4), 0.25, dtype=DTYPE)
    cfg = ExposureConfig(patch=2, target_E=0.5)
    assert float(exposure_loss(image, cfg)) == pytest.approx(0.25, abs=1e-12)


def test_exposure_grad_check(gen):
    image = torch.rand(3, 8, 8, generator=gen, dtype=DTYPE) * 0.3
    report = grad_check(lambda v, t: exposure_loss(v, ExposureConfig(patch=4), t), image)
    assert report.passed, report.max_rel_error


# ── color ───────────────────────────────────────────────────────────────────

def test_color_gray_world_value():
    assert float(color_loss(_channels(0.5, 0.5, 0.6))) == pytest.approx(0.02, abs=1e-12)


def test_color_of_gray_image_is_zero(gen):
    gray = torch.rand(1, 6, 6, generator=gen, dtype=DTYPE).expand(3, 6, 6).contiguous()
    assert float(color_loss(gray)) == 0.0


def test_color_is_channel_permutation_invariant(gen):
    image = torch.rand(3, 5, 5, generator=gen, dtype=DTYPE)
    assert float(color_loss(image[[2, 0, 1]])) == pytest.approx(float(color_loss(image)), abs=1e-15)


def test_color_rejects_non_rgb():
    with pytest.raises(ShapeMismatchError):
        color_loss(torch.zeros(2, 3, 3, dtype=DTYPE))


def test_color_grad_check(gen):
    report = grad_check(lambda v, t: color_loss(v, t), torch.rand(3, 4, 4, generator=gen, dtype=DTYPE))
    assert report.passed, report.max_rel_error


# ── tv ──────────────────────────────────────────────────────────────────────

def test_tv_two_pixels():
    assert float(tv_loss(as_tensor([[[0.2, 0.7]]]))) == pytest.approx(0.25, abs=1e-15)


def test_tv_constant_mask_is_zero():
    assert float(tv_loss(torch.full((3, 5, 4), 0.3, dtype=DTYPE))) == 0.0


def test_tv_single_pixel_is_zero():
    assert float(tv_loss(torch.ones(3, 1, 1, dtype=DTYPE))) == 0.0


def test_tv_sums_both_directions():
    mask = as_tensor([[[0.0, 1.0], [1.0, 0.0]]])
    # horizontal diffs: 1, 1 -> mean 1; vertical diffs: 1, 1 -> mean 1
    assert float(tv_loss(mask)) == pytest.approx(2.0)


def test_tv_grad_check(gen):
    report = grad_check(lambda v, t: tv_loss(v, t), torch.rand(3, 4, 5, generator=gen, dtype=DTYPE))
    assert report.passed, report.max_rel_error


# ── total ───────────────────────────────────────────────────────────────────

def test_total_default_weights():
    one = as_tensor(1.0)
    assert float(total_loss(one, one, one, one)) == pytest.approx(2.3, abs=1e-15)


def test_total_custom_weights():
    w = LossWeights(lambda_loc=0.0, lambda_1=2.0, lambda_2=0.0, lambda_3=1.0)
    out = total_loss(as_tensor(5.0), as_tensor(0.5), as_tensor(9.0), as_tensor(0.25), w)
    assert float(out) == pytest.approx(1.25)
