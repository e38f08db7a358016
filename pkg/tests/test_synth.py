import numpy as np
import pytest

from tae.config import SynthConfig
from tae.errors import ConfigError
from tae.services.dataset import load_dataset
from tae.services.image_io import read_image
from tae.services.synth import expected_mean_intensity, render_frame, synth_dataset


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_fixed_seed_is_byte_identical(tmp_path, tiny_synth):
    synth_dataset(tiny_synth, tmp_path / "a")
    synth_dataset(tiny_synth, tmp_path / "b")
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_different_seed_differs(tmp_path, tiny_synth):
    synth_dataset(tiny_synth, tmp_path / "a")
    synth_dataset(tiny_synth.model_copy(update={"seed": 4}), tmp_path / "b")
    assert _tree(tmp_path / "a") != _tree(tmp_path / "b")


def test_layout_loads_as_dataset(synth_root, tiny_synth):
    train = load_dataset(synth_root, "train")
    test = load_dataset(synth_root, "test")
    assert [r.id for r in train] == ["seq_0001", "seq_0002"]
    assert [r.id for r in test] == ["seq_0003", "seq_0004"]
    for record in train + test:
        assert len(record) == tiny_synth.frames
        assert record.frame_size == (tiny_synth.width, tiny_synth.height)
        assert record.attributes is not None and len(record.attributes) == 12
        assert record.category is not None


def test_groundtruth_covers_the_bright_square(synth_root, tiny_synth):
    midpoint = (tiny_synth.base_intensity + tiny_synth.target_intensity) / 2
    for record in load_dataset(synth_root, "test"):
        for frame, box in zip(record.frames, record.boxes):
            image = read_image(frame).mean(dim=0)
            x, y, s = int(box.x), int(box.y), int(box.w)
            assert box.w == box.h == tiny_synth.target_size
            inside = image[y : y + s, x : x + s]
            assert float(inside.mean()) > midpoint
            outside = image.clone()
            outside[y : y + s, x : x + s] = 0.0
            count = image.numel() - s * s
            assert float(outside.sum()) / count < midpoint


def test_boxes_stay_inside_frame_and_move_smoothly(tmp_path):
    cfg = SynthConfig(train_sequences=0, test_sequences=3, frames=40, height=20, width=24, target_size=5, target_speed=2.0, seed=1)
    for seq in synth_dataset(cfg, tmp_path):
        for a, b in zip(seq.boxes, seq.boxes[1:]):
            assert abs(b.x - a.x) <= 3 and abs(b.y - a.y) <= 3
        for box in seq.boxes:
            assert 0 <= box.x <= cfg.width - cfg.target_size
            assert 0 <= box.y <= cfg.height - cfg.target_size


def test_mean_intensity_matches_config():
    cfg = SynthConfig(height=64, width=64, target_size=16, seed=0)
    rng = np.random.default_rng(0)
    frame = render_frame(cfg, (10, 20), rng)
    assert frame.shape == (3, 64, 64)
    assert abs(float(frame.mean()) - expected_mean_intensity(cfg)) <= 0.02


def test_zero_speed_keeps_target_still(tmp_path, tiny_synth):
    cfg = tiny_synth.model_copy(update={"target_speed": 0.0})
    for seq in synth_dataset(cfg, tmp_path):
        assert all(b == seq.boxes[0] for b in seq.boxes)


def test_target_larger_than_frame(tmp_path):
    cfg = SynthConfig(height=8, width=32, target_size=9)
    with pytest.raises(ConfigError):
        synth_dataset(cfg, tmp_path)
