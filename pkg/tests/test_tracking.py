import pytest
import torch

from tae.config import TrackerConfig, parse_config
from tae.errors import EvaluationError
from tae.models.schemas import BBox, SequenceRecord
from tae.services.dataset import load_dataset
from tae.services.enhancement import Enhancer, build_networks
from tae.services.synth import synth_dataset
from tae.services.tensor_core import DTYPE
from tae.services.tracking import (
    NCCTracker,
    OracleTracker,
    StaticTracker,
    TrackerAdapter,
    run_ope,
    track_sequence,
    tracker_factory,
)


def _frame_with_patch(patch: torch.Tensor, x: int, y: int, size=(40, 48)) -> torch.Tensor:
    height, width = size
    frame = torch.full((3, height, width), 0.1, dtype=DTYPE)
    s = patch.shape[-1]
    frame[:, y : y + s, x : x + s] = patch
    return frame


@pytest.fixture
def patch(gen) -> torch.Tensor:
    return torch.rand(1, 8, 8, generator=gen, dtype=DTYPE).expand(3, 8, 8)


# ── NCC ─────────────────────────────────────────────────────────────────────

def test_ncc_follows_shifted_patch(patch):
    tracker = NCCTracker(search_radius=6)
    tracker.init(_frame_with_patch(patch, 10, 12), BBox(x=10, y=12, w=8, h=8))
    box = tracker.update(_frame_with_patch(patch, 13, 10))
    assert box == BBox(x=13, y=10, w=8, h=8)
    assert tracker.last_score == pytest.approx(1.0, abs=1e-4)


def test_ncc_zero_motion(patch):
    frame = _frame_with_patch(patch, 20, 5)
    tracker = NCCTracker(search_radius=4)
    tracker.init(frame, BBox(x=20, y=5, w=8, h=8))
    assert tracker.update(frame) == BBox(x=20, y=5, w=8, h=8)
    assert tracker.last_score == pytest.approx(1.0, abs=1e-4)


def test_ncc_keeps_fractional_box_offset(patch):
    tracker = NCCTracker(search_radius=6)
    tracker.init(_frame_with_patch(patch, 10, 12), BBox(x=10.25, y=12.0, w=8, h=8))
    box = tracker.update(_frame_with_patch(patch, 12, 12))
    assert box.x == pytest.approx(12.25)
    assert box.y == pytest.approx(12.0)


def test_ncc_flat_template_holds_position():
    flat = torch.full((3, 20, 20), 0.3, dtype=DTYPE)
    tracker = NCCTracker()
    tracker.init(flat, BBox(x=2, y=2, w=5, h=5))
    assert tracker.update(flat) == BBox(x=2, y=2, w=5, h=5)


def test_ncc_update_before_init():
    with pytest.raises(EvaluationError):
        NCCTracker().update(torch.zeros(3, 8, 8, dtype=DTYPE))


def test_ncc_rejects_bad_radius():
    with pytest.raises(EvaluationError):
        NCCTracker(search_radius=0)


# ── Other trackers ──────────────────────────────────────────────────────────

def test_oracle_repeats_last_known_box():
    a, b = BBox(x=1, y=1, w=2, h=2), BBox(x=3, y=3, w=2, h=2)
    tracker = OracleTracker([a, None, b, None])
    frame = torch.zeros(3, 4, 4, dtype=DTYPE)
    tracker.init(frame, a)
    assert [tracker.update(frame) for _ in range(3)] == [a, b, b]


def test_factory_builds_protocol_trackers():
    record = SequenceRecord(id="s", frames=[], boxes=[], split="test")
    for name, cls in (("ncc", NCCTracker), ("oracle", OracleTracker), ("static", StaticTracker)):
        tracker = tracker_factory(TrackerConfig(name=name))(record)
        assert isinstance(tracker, cls)
        assert isinstance(tracker, TrackerAdapter)


# ── OPE ─────────────────────────────────────────────────────────────────────

def test_oracle_ope_is_perfect(synth_root):
    records = load_dataset(synth_root, "test")
    result = run_ope(records, tracker_factory(TrackerConfig(name="oracle")))
    assert result.report.mean.success_auc == pytest.approx(20 / 21)
    assert result.report.mean.precision == 1.0
    assert result.report.mean.norm_precision == 1.0
    assert result.report.metadata["enhancer"] == "none"
    assert [len(r.boxes) for r in result.runs] == [len(r) for r in records]


def test_static_tracker_on_still_target(tmp_path, tiny_synth):
    synth_dataset(tiny_synth.model_copy(update={"target_speed": 0.0}), tmp_path)
    result = run_ope(load_dataset(tmp_path, "test"), lambda record: StaticTracker(), jobs=2)
    assert result.report.mean.success_auc == pytest.approx(20 / 21)


def test_ncc_tracks_synthetic_square(synth_root):
    records = load_dataset(synth_root, "test")
    result = run_ope(records, tracker_factory(TrackerConfig(name="ncc", search_radius=4, template_size=10)))
    assert result.report.mean.precision == 1.0


class _Exploding:
    def __init__(self) -> None:
        self.calls = 0

    def init(self, frame, box):
        self.box = box

    def update(self, frame):
        self.calls += 1
        if self.calls == 2:
            raise RuntimeError("lost")
        return self.box.shifted(self.calls, 0)


def test_update_failure_carries_last_box(synth_root):
    record = load_dataset(synth_root, "test")[0]
    run = track_sequence(record, _Exploding())
    assert len(run.boxes) == len(record)
    assert run.boxes[2] == run.boxes[1]
    assert run.boxes[1] == record.boxes[0].shifted(1, 0)
    assert len(run.times) == len(record)


def test_short_or_unannotated_sequences_rejected(synth_root):
    record = load_dataset(synth_root, "test")[0]
    short = record.model_copy(update={"frames": record.frames[:1], "boxes": record.boxes[:1]})
    with pytest.raises(EvaluationError):
        track_sequence(short, StaticTracker())
    blind = record.model_copy(update={"boxes": [None, *record.boxes[1:]]})
    with pytest.raises(EvaluationError):
        track_sequence(blind, StaticTracker())


def test_enhanced_and_raw_runs_align(synth_root):
    cfg = parse_config({"guidance": {"channels": 3}, "enhancement": {"predictor_channels": 3}})
    enhancer = Enhancer(*build_networks(cfg), mode="TA+MC")
    records = load_dataset(synth_root, "test")
    result = run_ope(
        records, tracker_factory(TrackerConfig(name="oracle")), enhancer, compare_without=True, jobs=2
    )
    assert result.reference_runs is not None
    assert [len(r.boxes) for r in result.runs] == [len(r.boxes) for r in result.reference_runs]
    assert [row.name for row in result.comparison] == ["none", "TA+MC"]
    assert result.comparison[1].delta_success_auc == pytest.approx(0.0)
    assert result.report.metadata["enhancer"] == "TA+MC"


def test_no_sequences():
    with pytest.raises(EvaluationError):
        run_ope([], lambda record: StaticTracker())
