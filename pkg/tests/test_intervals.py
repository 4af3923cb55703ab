import math

import pytest
from hypothesis import given, strategies as st

from progressive_grounding.intervals import (
    TimeInterval, center_bin, iou, mean_iou, query_center, recall_at,
)
from progressive_grounding.selftest import unit_cell_iou


@st.composite
def int_intervals(draw, hi=100):
    s = draw(st.integers(0, hi))
    return (s, s + draw(st.integers(1, hi)))


@st.composite
def intervals(draw):
    s = draw(st.floats(0, 1e4, allow_nan=False))
    length = draw(st.floats(1e-3, 1e4, allow_nan=False))
    return TimeInterval(s, s + length)


def test_iou_examples():
    assert iou(TimeInterval(0, 10), TimeInterval(5, 15)) == pytest.approx(5 / 15)
    assert iou(TimeInterval(0, 10), TimeInterval(10, 20)) == 0.0
    assert iou(TimeInterval(3, 7), TimeInterval(3, 7)) == 1.0
    assert iou(TimeInterval(0, 10), TimeInterval(2, 4)) == pytest.approx(0.2)


@given(int_intervals(), int_intervals())
def test_iou_matches_cell_count(a, b):
    assert iou(TimeInterval(*a), TimeInterval(*b)) == unit_cell_iou(a, b)


@given(intervals(), intervals())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@given(intervals())
def test_iou_self_is_one(a):
    assert iou(a, a) == 1.0


@given(intervals(), intervals(), st.floats(0, 1e3), st.floats(0.1, 10))
def test_iou_invariant_under_joint_affine_map(a, b, offset, k):
    before = iou(a, b)
    after = iou(a.scaled(k).shifted(offset), b.scaled(k).shifted(offset))
    assert after == pytest.approx(before, abs=1e-9)


@pytest.mark.parametrize("pair", [(5, 5), (5, 4), (-1, 3), (math.nan, 1)])
def test_invalid_intervals_rejected(pair):
    with pytest.raises(ValueError):
        TimeInterval(*pair)


def test_recall_and_mean():
    scores = [0.2, 0.5, 0.7, 0.9]
    assert recall_at(scores, 0.5) == 0.75
    assert recall_at(scores, 0.7) == 0.5
    assert mean_iou(scores) == pytest.approx(0.575)
    with pytest.raises(ValueError):
        recall_at([], 0.5)
    with pytest.raises(ValueError):
        mean_iou([])
    with pytest.raises(ValueError):
        recall_at(scores, 0.0)


@given(st.lists(st.floats(0, 1), min_size=1), st.floats(0.01, 0.5), st.floats(0.5, 1))
def test_recall_monotone_in_threshold(scores, lo, hi):
    assert recall_at(scores, hi) <= recall_at(scores, lo)


def test_query_center_and_bins():
    assert query_center(TimeInterval(40, 60), 100) == 0.5
    assert center_bin(0.0, 10) == 0
    assert center_bin(0.1, 10) == 1
    assert center_bin(1.0, 10) == 9
    assert center_bin(1 / 3, 3) == 1
    with pytest.raises(ValueError):
        query_center(TimeInterval(90, 110), 100)
    with pytest.raises(ValueError):
        center_bin(1.5, 3)


@given(st.floats(0, 1), st.integers(1, 50))
def test_center_bin_contains_center(c, bins):
    k = center_bin(c, bins)
    assert 0 <= k < bins
    assert k / bins <= c
    assert c < (k + 1) / bins or k == bins - 1
