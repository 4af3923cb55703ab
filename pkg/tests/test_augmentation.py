import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progressive_grounding import augmentation as aug
from progressive_grounding.cache import FrameSequence
from progressive_grounding.intervals import TimeInterval, iou
from progressive_grounding.manifest import GroundingSample, load_video, save_features


def _pair(n=100, gt=(30, 45), fps=1.0):
    video = FrameSequence("v", np.random.default_rng(n).standard_normal((n, 3)), fps=fps)
    sample = GroundingSample("s", "v", video.duration_s, "q", TimeInterval(*gt), "t", "c",
                             fps=fps, feature_path="v.npy", signal=TimeInterval(*gt))
    return sample, video


def test_shift_moves_everything():
    s, v = _pair()
    s2, v2 = aug.shift(s, v, 10)
    assert s2.gt == TimeInterval(40, 55)
    assert s2.duration_s == 110
    assert v2.frame_times[0] == 10
    assert np.array_equal(v2.frames, v.frames)
    assert v2.timestamp_tokens()[0].text == "Time: 10.0 Second"
    assert s2.augmentations == ({"kind": "shift", "shift_offset_s": 10},)


def test_shift_composes():
    s, v = _pair()
    a = aug.shift(*aug.shift(s, v, 7.5), 12.25)[0]
    b = aug.shift(s, v, 19.75)[0]
    assert a.gt == b.gt and a.duration_s == b.duration_s


def test_scale_round_trip():
    s, v = _pair()
    s2, v2 = aug.scale(*aug.scale(s, v, 2.0), 0.5)
    assert abs(s2.gt.start_s - 30) < 1e-9 and abs(s2.gt.end_s - 45) < 1e-9
    assert np.allclose(v2.frame_times, v.frame_times, atol=1e-9)
    assert s2.fps == pytest.approx(1.0)


def test_scale_changes_frame_rate():
    s, v = _pair()
    s2, v2 = aug.scale(s, v, 2.0)
    assert v2.fps == 0.5 and v2.period == 2.0
    assert s2.gt == TimeInterval(60, 90) and s2.duration_s == 200


def test_cut_rebases_and_clips():
    s, v = _pair(gt=(30, 45))
    s2, v2 = aug.cut(s, v, TimeInterval(40, 55))
    assert s2.gt == TimeInterval(0, 5)
    assert s2.duration_s == 15
    assert v2.n_frames == 15
    assert v2.frame_times[0] == 0
    assert s2.frame_range == (40, 55)
    assert np.array_equal(v2.frames, v.frames[40:55])


def test_cut_fractional_window_keeps_whole_frames():
    s, v = _pair(gt=(30, 45))
    s2, v2 = aug.cut(s, v, TimeInterval(29.5, 42.3))
    assert v2.frame_times[0] == pytest.approx(0.5)
    assert v2.n_frames == 12  # frames 30..41
    assert v2.duration_s == pytest.approx(12.8)


def test_cut_missing_target_discards():
    s, v = _pair(gt=(30, 45))
    with pytest.raises(aug.Discarded):
        aug.cut(s, v, TimeInterval(60, 75))


def test_cut_outside_video_rejected():
    s, v = _pair()
    with pytest.raises(ValueError):
        aug.cut(s, v, TimeInterval(95, 110))


def test_spec_ranges_validated():
    with pytest.raises(ValueError):
        aug.AugmentationSpec("shift", shift_offset_s=2)
    with pytest.raises(ValueError):
        aug.AugmentationSpec("cut", cut_start_s=0, cut_span_s=25)
    with pytest.raises(ValueError):
        aug.AugmentationSpec("scale", scale_factor=0)
    with pytest.raises(ValueError):
        aug.AugmentationSpec("flip")


def test_drawn_ranges_respected():
    s, _ = _pair(n=300, gt=(100, 130))
    rng = np.random.default_rng(0)
    shifts = [aug.draw_spec("shift", s, rng).shift_offset_s for _ in range(10_000)]
    cuts = [aug.draw_spec("cut", s, rng) for _ in range(10_000)]
    scales = [aug.draw_spec("scale", s, rng).scale_factor for _ in range(10_000)]
    assert 4 <= min(shifts) and max(shifts) <= 1004
    assert all(10 <= c.cut_span_s <= 20 for c in cuts)
    assert all(c.cut_start_s + c.cut_span_s <= 300 for c in cuts)
    assert 0.5 <= min(scales) and max(scales) <= 2.0
    # log-uniform: the median sits near 1
    assert abs(np.median(scales) - 1.0) < 0.05


def test_drawn_cuts_keep_target():
    s, v = _pair(n=300, gt=(100, 130))
    rng = np.random.default_rng(1)
    for _ in range(500):
        s2, _ = aug.apply(aug.draw_spec("cut", s, rng), s, v)
        assert s2.gt.length > 0


def test_cut_longer_than_video_discards():
    s, _ = _pair(n=8, gt=(2, 4))
    with pytest.raises(aug.Discarded):
        aug.draw_spec("cut", s, np.random.default_rng(0))


def test_pinned_value_overrides_draw():
    s, _ = _pair(n=300, gt=(100, 130))
    spec = aug.draw_spec("cut", s, np.random.default_rng(0), value=12.0)
    assert spec.cut_span_s == 12.0
    assert spec.cut_start_s <= 130 and spec.cut_start_s + 12 >= 100


@settings(max_examples=100, deadline=None)
@given(st.floats(4, 1004), st.floats(0.5, 2.0), st.floats(0, 60), st.floats(1, 40))
def test_iou_invariant_under_joint_transform(offset, k, ps, plen):
    s, v = _pair()
    pred = TimeInterval(ps, ps + plen)
    before = iou(pred, s.gt)
    s2, _ = aug.shift(*aug.scale(s, v, k), offset)
    assert iou(pred.scaled(k).shifted(offset), s2.gt) == pytest.approx(before, abs=1e-9)


@pytest.mark.parametrize("kinds", [["shift"], ["scale"], ["cut"], ["shift", "cut", "scale"], ["cut", "shift"]])
def test_augmented_sample_reloads_from_record(tmp_path, kinds):
    s, v = _pair(n=120, gt=(50, 62))
    save_features(tmp_path / "v.npy", v.frames)
    rng = np.random.default_rng(3)
    for kind in kinds:
        s, v = aug.apply(aug.draw_spec(kind, s, rng), s, v)
    again = GroundingSample.from_record(s.to_record())
    assert again == s
    reloaded = load_video(again, tmp_path)
    assert np.array_equal(reloaded.frames, v.frames)
    assert np.allclose(reloaded.frame_times, v.frame_times, atol=1e-9)
    assert reloaded.duration_s == v.duration_s
    assert [a["kind"] for a in again.augmentations] == kinds
