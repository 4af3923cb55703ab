import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progressive_grounding.evaluation import (
    EvalReport, RobustnessRow, bucket_by_duration, check_gap_column, duration_bucket, evaluate,
    position_dispersion, position_gap, robustness_table, thirds_by_center,
)
from progressive_grounding.intervals import TimeInterval
from progressive_grounding.manifest import GroundingSample
from progressive_grounding.selftest import REFERENCE_DECILES, REFERENCE_THIRDS


def _gt(i, dur, s, e):
    return GroundingSample(f"s{i}", f"v{i}", dur, "q", TimeInterval(s, e))


def test_duration_boundaries_go_to_lower_bucket():
    assert duration_bucket(180) == "short"
    assert duration_bucket(180.01) == "medium"
    assert duration_bucket(900) == "medium"
    assert duration_bucket(901) == "long"
    with pytest.raises(ValueError):
        bucket_by_duration([], (900, 180))


def test_dispersion_uses_sample_std():
    assert position_dispersion([1, 2, 3]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        position_dispersion([1.0])


@pytest.mark.parametrize("label", list(REFERENCE_THIRDS))
def test_reference_std_dev_column(label):
    recalls, reported = REFERENCE_THIRDS[label]
    assert abs(position_dispersion(recalls) - reported) <= 0.1


def test_reference_gap():
    recalls, reported = REFERENCE_DECILES["Qwen2.5VL R@0.3"]
    assert abs(100 * position_gap(recalls) - reported) <= 1.0


def test_gap_edge_cases():
    assert position_gap([0.0, 0.0]) is None
    assert position_gap([0.5, 0.5]) == 0.0
    assert position_gap([1.0, 0.0]) == 1.0


def test_gap_column_flags_divergent_rows(caplog):
    rows = {
        "match": ([0.417, 0.368, 0.615, 0.222, 0.250, 0.158, 0.278, 0.235, 0.133, 0.154], 78.0),
        "diverges": ([0.393, 0.417, 0.606, 0.464, 0.421, 0.470, 0.555, 0.667, 0.470, 0.467], 35.1),
    }
    with caplog.at_level(logging.WARNING):
        checks = check_gap_column(rows)
    assert [c.matches for c in checks] == [True, False]
    assert checks[1].computed_pct == pytest.approx(41.08, abs=0.01)
    assert "diverges" in caplog.text


def test_evaluate_small_batch():
    gts = [_gt(0, 100, 10, 20), _gt(1, 100, 40, 60), _gt(2, 1000, 900, 950), _gt(3, 100, 0, 10)]
    preds = {"s0": TimeInterval(10, 20), "s1": TimeInterval(45, 60), "s2": TimeInterval(0, 50), "extra": TimeInterval(0, 1)}
    rep = evaluate(preds, gts)
    assert rep.per_sample_iou == {"s0": 1.0, "s1": 0.75, "s2": 0.0, "s3": 0.0}
    assert rep.r1_at == {0.3: 0.5, 0.5: 0.5, 0.7: 0.5}
    assert rep.miou == pytest.approx(1.75 / 4)
    assert rep.missing == ["s3"]
    assert rep.unmatched_predictions == 1
    assert rep.by_duration["short"].n == 3 and rep.by_duration["long"].n == 1


def test_evaluate_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        evaluate({}, [_gt(0, 100, 1, 2), _gt(0, 100, 1, 2)])
    with pytest.raises(ValueError):
        evaluate({}, [])


def _random_batch(rng, n):
    gts, preds = [], {}
    for i in range(n):
        dur = float(rng.choice([60, 300, 1200])) * rng.uniform(0.5, 1.5)
        s = rng.uniform(0, dur * 0.9)
        e = rng.uniform(s + 0.1, dur)
        gts.append(_gt(i, dur, s, e))
        ps = max(0.0, s + rng.normal(0, 5))
        preds[f"s{i}"] = TimeInterval(ps, ps + (e - s) * rng.uniform(0.5, 1.5))
    return gts, preds


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 80))
def test_subsets_recombine_to_overall(seed, n):
    gts, preds = _random_batch(np.random.default_rng(seed), n)
    rep = evaluate(preds, gts)
    for t in rep.thresholds:
        for parts in (rep.by_duration.values(), rep.by_center_third.values(), rep.by_center_decile):
            parts = [p for p in parts if p.n]
            assert sum(p.n for p in parts) == n
            assert sum(p.n * p.r1_at[t] for p in parts) / n == pytest.approx(rep.r1_at[t])
    assert sum(rep.per_sample_iou.values()) / n == pytest.approx(rep.miou)


def test_report_serialization_round_trip():
    gts, preds = _random_batch(np.random.default_rng(0), 50)
    rep = evaluate(preds, gts)
    doc = json.loads(json.dumps(rep.to_dict()))
    again = EvalReport.from_dict(doc)
    assert again == rep
    assert again.render() == rep.render()


def test_uniform_centers_split_into_equal_thirds():
    rng = np.random.default_rng(0)
    gts = []
    for i in range(10_000):
        c = rng.uniform(0.01, 0.99)
        gts.append(_gt(i, 100.0, c * 100 - 0.5, c * 100 + 0.5))
    sizes = {k: len(v) / len(gts) for k, v in thirds_by_center(gts).items()}
    for frac in sizes.values():
        assert abs(frac - 1 / 3) <= 0.02


def test_dispersion_and_gap_in_report():
    # early third always hit, others always miss
    gts = [_gt(i, 100, c - 1, c + 1) for i, c in enumerate([10, 15, 50, 55, 85, 90])]
    preds = {g.sample_id: (g.gt if g.center < 1 / 3 else TimeInterval(99, 100)) for g in gts}
    rep = evaluate(preds, gts)
    assert rep.dispersion[0.5] == pytest.approx(math.sqrt(1 / 3))
    assert rep.gap[0.5] == 1.0


def test_robustness_table_marks_rows():
    rows = [RobustnessRow(k, v[0], reported_std=v[1]) for k, v in REFERENCE_THIRDS.items()]
    rows.append(RobustnessRow("Timescope R@0.3", [0.393, 0.417, 0.606, 0.464, 0.421, 0.470, 0.555, 0.667, 0.470, 0.467],
                              reported_gap_pct=35.1))
    table = robustness_table(rows)
    assert all(e["std_matches"] for e in table[:4])
    assert table[4]["gap_matches"] is False
