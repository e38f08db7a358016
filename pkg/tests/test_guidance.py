import math

import pytest
import torch

from tae.errors import ShapeMismatchError
from tae.models.schemas import BBox
from tae.services.guidance import (
    GuidanceNets,
    box_center,
    gaussian_soft_label,
    loc_loss,
    mask_forward,
    objectness_forward,
)
from tae.services.tensor_core import DTYPE, Tape, backward, grad_check, reduce_sum


@pytest.mark.parametrize(
    "box,center",
    [((10, 20, 30, 40), (25, 40)), ((0, 0, 2, 2), (1, 1)), ((2.5, 3.0, 5.0, 1.0), (5.0, 3.5))],
)
def test_box_center(box, center):
    assert box_center(BBox(x=box[0], y=box[1], w=box[2], h=box[3])) == center


def test_soft_label_values_at_center_and_one_sigma():
    box = BBox(x=6, y=4, w=8, h=4)  # center (10, 6), sigma (4, 2)
    label = gaussian_soft_label(box, 16, 24)
    assert label.shape == (1, 16, 24)
    assert float(label[0, 6, 10]) == 1.0
    assert float(label[0, 6, 14]) == pytest.approx(math.exp(-0.5), abs=1e-12)
    assert float(label[0, 8, 14]) == pytest.approx(math.exp(-1.0), abs=1e-12)


def test_soft_label_is_translation_equivariant():
    a = gaussian_soft_label(BBox(x=4, y=3, w=6, h=4), 20, 20)
    b = gaussian_soft_label(BBox(x=6, y=4, w=6, h=4), 20, 20)
    assert torch.equal(a[0, 0:15, 0:14], b[0, 1:16, 2:16])


def test_soft_label_is_rank_one():
    label = gaussian_soft_label(BBox(x=3.3, y=1.7, w=5.1, h=2.9), 9, 11)[0]
    s = torch.linalg.svdvals(label)
    assert float(s[1]) <= 1e-12 * float(s[0])


def test_soft_label_zero_outside_box():
    label = gaussian_soft_label(BBox(x=4, y=4, w=4, h=4), 12, 12, zero_outside_box=True)
    assert float(label[0, 0, 0]) == 0.0
    assert float(label[0, 6, 6]) == 1.0


def test_fresh_heads_give_half_maps(gen):
    nets = GuidanceNets(channels=4, generator=gen)
    image = torch.rand(3, 6, 7, generator=gen, dtype=DTYPE)
    features, objectness = objectness_forward(image, nets)
    mask = mask_forward(objectness, features, nets)
    assert features.shape == (4, 6, 7)
    assert objectness.shape == (1, 6, 7)
    assert mask.shape == (3, 6, 7)
    assert torch.equal(objectness, torch.full_like(objectness, 0.5))
    assert torch.equal(mask, torch.full_like(mask, 0.5))


def test_default_width_is_sixteen_channels(gen):
    nets = GuidanceNets(generator=gen)
    features, _ = objectness_forward(torch.zeros(3, 4, 4, dtype=DTYPE), nets)
    assert features.shape[0] == 16
    assert nets.mask_head[0].in_channels == 17


def test_mask_in_unit_range_for_random_weights(gen):
    nets = GuidanceNets(channels=4, generator=gen)
    with torch.no_grad():
        for p in nets.parameters():
            p.uniform_(-3, 3, generator=gen)
    _, _, mask = nets(torch.rand(3, 5, 5, generator=gen, dtype=DTYPE))
    assert bool(((mask >= 0) & (mask <= 1)).all())


def test_objectness_rejects_non_rgb():
    with pytest.raises(ShapeMismatchError):
        objectness_forward(torch.zeros(1, 4, 4, dtype=DTYPE), GuidanceNets(channels=2))


def test_objectness_first_layer_grad_check(gen):
    nets = GuidanceNets(channels=3, generator=gen)
    with torch.no_grad():
        nets.objectness_head.weight.uniform_(-0.5, 0.5, generator=gen)
    image = torch.rand(3, 4, 4, generator=gen, dtype=DTYPE)
    first = nets.features[0]

    w0 = first.weight.detach().clone()
    tape = Tape()
    _, objectness = objectness_forward(image, nets, tape)
    loss = reduce_sum(objectness, tape)
    backward(tape, loss, [first.weight])
    analytic = first.weight.grad.reshape(-1).clone()

    h = 1e-5
    flat = first.weight.data.view(-1)
    for i in range(0, flat.numel(), 9):
        with torch.no_grad():
            flat[i] = w0.view(-1)[i] + h
            plus = float(objectness_forward(image, nets)[1].sum())
            flat[i] = w0.view(-1)[i] - h
            minus = float(objectness_forward(image, nets)[1].sum())
            flat[i] = w0.view(-1)[i]
        numeric = (plus - minus) / (2 * h)
        denom = max(abs(numeric), abs(float(analytic[i])), 1e-6)
        assert abs(numeric - float(analytic[i])) / denom <= 1e-3


def test_mask_grad_wrt_objectness(gen):
    nets = GuidanceNets(channels=3, generator=gen)
    with torch.no_grad():
        nets.mask_head[-1].weight.uniform_(-0.5, 0.5, generator=gen)
    features = torch.rand(3, 4, 4, generator=gen, dtype=DTYPE)
    objectness = torch.rand(1, 4, 4, generator=gen, dtype=DTYPE)
    report = grad_check(lambda o, t: reduce_sum(mask_forward(o, features, nets, t), t), objectness, tol=1e-3)
    assert report.passed, report.max_rel_error


# ── loc_loss ────────────────────────────────────────────────────────────────

def test_loc_loss_perfect_ones():
    ones = torch.ones(1, 3, 3, dtype=DTYPE)
    assert float(loc_loss(ones, ones)) == pytest.approx(0.0, abs=1e-6)


def test_loc_loss_half_uniform():
    half = torch.full((1, 2, 2), 0.5, dtype=DTYPE)
    assert float(loc_loss(half, half)) == pytest.approx(math.log(2) + 0.5, abs=1e-6)


def test_loc_loss_sum_reduction_scales_bce():
    half = torch.full((1, 2, 2), 0.5, dtype=DTYPE)
    assert float(loc_loss(half, half, "sum")) == pytest.approx(4 * math.log(2) + 0.5, abs=1e-6)


def test_loc_loss_of_binary_map_with_itself(gen):
    o = (torch.rand(1, 6, 6, generator=gen, dtype=DTYPE) > 0.5).to(DTYPE)
    o[0, 0, 0] = 1.0
    assert float(loc_loss(o, o)) <= 1e-5


def test_loc_loss_fixed_point_on_soft_labels(gen):
    for _ in range(20):
        x, y = (float(v) for v in torch.rand(2, generator=gen) * 14)
        w, h = (float(v) for v in torch.rand(2, generator=gen) * 4 + 2)
        label = gaussian_soft_label(BBox(x=x, y=y, w=w, h=h), 24, 24)
        own = float(loc_loss(label, label))
        others = [1.0 - label, torch.full_like(label, 0.5), torch.rand(label.shape, generator=gen, dtype=DTYPE)]
        assert all(own < float(loc_loss(o, label)) for o in others)


def test_loc_loss_grad_check(gen):
    label = torch.rand(1, 4, 4, generator=gen, dtype=DTYPE)
    o = torch.rand(1, 4, 4, generator=gen, dtype=DTYPE) * 0.8 + 0.1
    report = grad_check(lambda v, t: loc_loss(v, label, tape=t), o)
    assert report.passed, report.max_rel_error


def test_loc_loss_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        loc_loss(torch.ones(1, 2, 2, dtype=DTYPE), torch.ones(1, 2, 3, dtype=DTYPE))
