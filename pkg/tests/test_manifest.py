import numpy as np
import pytest

from progressive_grounding.intervals import TimeInterval
from progressive_grounding.manifest import (
    GroundingSample, load_features, load_video, read_jsonl, read_samples, relocate, save_features, write_jsonl,
)


def _sample(**kw):
    base = dict(sample_id="a", video_id="v", duration_s=60.0, query="q", gt=TimeInterval(10, 20),
                task_type="t", video_category="c", feature_path="f.npy")
    base.update(kw)
    return GroundingSample(**base)


def test_record_round_trip():
    s = _sample(options=["x", "y"], answer="B", signal=TimeInterval(11, 19), frame_range=(3, 50),
                time_origin_s=2.0, augmentations=({"kind": "shift", "shift_offset_s": 2.0},))
    assert GroundingSample.from_record(s.to_record()) == s


def test_record_field_order():
    keys = list(_sample(options=["x"]).to_record())
    assert keys[:8] == ["sample_id", "video_id", "duration_s", "fps", "feature_path", "query", "options", "gt"]


def test_gt_must_fit_video():
    with pytest.raises(ValueError):
        _sample(gt=TimeInterval(50, 70))


def test_jsonl_with_header(tmp_path):
    path = tmp_path / "m.jsonl"
    write_jsonl(path, [_sample().to_record(), _sample(sample_id="b").to_record()], {"seed": 3})
    meta, recs = read_jsonl(path)
    assert meta == {"seed": 3}
    assert [r["sample_id"] for r in recs] == ["a", "b"]
    assert [s.sample_id for s in read_samples(path)] == ["a", "b"]


def test_jsonl_reports_bad_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"a": 1}\n{oops\n')
    with pytest.raises(ValueError, match=":2:"):
        read_jsonl(path)


@pytest.mark.parametrize("ext", [".npy", ".txt", ".csv"])
def test_feature_layouts_round_trip(tmp_path, ext):
    frames = np.random.default_rng(0).standard_normal((7, 3))
    save_features(tmp_path / f"f{ext}", frames)
    assert np.array_equal(load_features(tmp_path / f"f{ext}"), frames)


def test_unknown_feature_extension(tmp_path):
    with pytest.raises(ValueError):
        save_features(tmp_path / "f.bin", np.zeros((2, 2)))


def test_load_video_applies_frame_range(tmp_path):
    frames = np.arange(40.0).reshape(20, 2)
    save_features(tmp_path / "f.npy", frames)
    s = _sample(duration_s=5.0, gt=TimeInterval(1, 2), frame_range=(10, 15), time_origin_s=0.0)
    v = load_video(s, tmp_path)
    assert np.array_equal(v.frames, frames[10:15])


def test_relocate_relative_paths():
    assert relocate("features/a.npy", "out/cur", "out") == "cur/features/a.npy"
    assert relocate("/abs/a.npy", "x", "y") == "/abs/a.npy"
    assert relocate(None, "x", "y") is None
