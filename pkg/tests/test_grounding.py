import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progressive_grounding import cache as kv
from progressive_grounding.grounding import (
    GroundingConfig, InnerProductScorer, Query, RemoteScorer, ScoreResponse, embed_text,
    get_scorer, ground_coarse, ground_fine, ground_progressive, ground_single_stage,
)
from progressive_grounding.intervals import TimeInterval, iou
from progressive_grounding.synthetic import EventSpec, make_corpus


class FixedScorer:
    """Returns preset scores for coarse and fine caches."""

    def __init__(self, coarse=None, fine=None):
        self.coarse, self.fine = coarse, fine

    def score(self, query, cache):
        if cache.granularity == kv.COARSE:
            return np.asarray(self.coarse, dtype=float)
        if callable(self.fine):
            return self.fine(cache)
        return np.asarray(self.fine, dtype=float)


def _video(n=16, dim=4, **kw):
    return kv.FrameSequence("v", np.random.default_rng(0).standard_normal((n, dim)), **kw)


def _query(dim=4):
    return Query.from_text("what happens", dim)


def _coarse(n=16, factor=4):
    fine = kv.prefill(kv.build_sequence(_video(n), _query().embedding))
    return kv.pool_cache(fine, factor)


def test_embed_text_is_deterministic_unit_vector():
    a, b = embed_text("hello", 16), embed_text("hello", 16)
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert not np.allclose(a, embed_text("hello!", 16))


def test_coarse_window_single_peak():
    w = ground_coarse(_coarse(), _query(), FixedScorer([0, 0, 9, 0]), delta=0.2, margin=1)
    assert (w.first_group, w.last_group, w.peak_index) == (1, 3, 2)
    assert w.interval == TimeInterval(4, 16)


def test_coarse_window_extends_over_near_peak_groups():
    scorer = FixedScorer([5, 9, 8.9, 0])
    w = ground_coarse(_coarse(), _query(), scorer, delta=0.2, margin=0)
    assert (w.first_group, w.last_group) == (1, 2)
    assert w.interval == TimeInterval(4, 12)
    full = ground_coarse(_coarse(), _query(), scorer, delta=0.2, margin=1)
    assert full.interval == TimeInterval(0, 16)


def test_coarse_window_ties_take_first_peak():
    w = ground_coarse(_coarse(), _query(), FixedScorer([0, 9, 0, 9]), delta=0.0, margin=0)
    assert w.peak_index == 1 and w.interval == TimeInterval(4, 8)


def test_flat_scores_give_degenerate_full_window():
    w = ground_coarse(_coarse(), _query(), FixedScorer([3, 3, 3, 3]))
    assert w.degenerate
    assert w.interval == TimeInterval(0, 16)


def test_unbounded_margin_covers_video():
    w = ground_coarse(_coarse(), _query(), FixedScorer([0, 0, 9, 0]), margin=None)
    assert w.interval == TimeInterval(0, 16)


def test_coarse_rejects_fine_cache_and_bad_scores():
    fine = kv.prefill(kv.build_sequence(_video(), _query().embedding))
    with pytest.raises(ValueError):
        ground_coarse(fine, _query(), FixedScorer([0] * 16))
    with pytest.raises(ValueError):
        ground_coarse(_coarse(), _query(), FixedScorer([0, 1]))
    with pytest.raises(ValueError):
        ground_coarse(_coarse(), _query(), FixedScorer([0, np.nan, 1, 0]))


def _restricted(times_from=10, n=6):
    video = kv.FrameSequence("v", np.zeros((n, 4)), frame_times=np.arange(times_from, times_from + n, dtype=float),
                             duration_s=times_from + n)
    return kv.prefill(kv.build_sequence(video, _query().embedding))


def test_fine_run_around_peak():
    out = ground_fine(_restricted(), _query(), FixedScorer(fine=[0, 0, 1, 1, 1, 0]), theta=0.5)
    assert out == TimeInterval(12, 15)


def test_fine_single_frame_event():
    fine = kv.prefill(kv.build_sequence(_video(20), _query().embedding))
    scores = np.zeros(20)
    scores[7] = 1
    assert ground_fine(fine, _query(), FixedScorer(fine=scores)) == TimeInterval(7, 8)


def test_fine_run_stops_at_first_gap():
    out = ground_fine(_restricted(0, 8), _query(), FixedScorer(fine=[1, 1, 0, 3, 3, 0, 1, 1]), theta=0.5)
    assert out == TimeInterval(3, 5)


@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4), st.floats(-1e3, 1e3), st.floats(0.1, 100))
def test_decisions_invariant_to_affine_score_maps(scores, c, k):
    base = ground_coarse(_coarse(), _query(), FixedScorer(scores))
    moved = ground_coarse(_coarse(), _query(), FixedScorer([k * s + c for s in scores]))
    span = max(scores) - min(scores)
    if span > 1e-6 * max(1.0, abs(c)):  # keep clear of rounding-level ties
        assert (moved.first_group, moved.last_group) == (base.first_group, base.last_group)


def test_pooled_scores_are_member_means():
    video = _video(23, dim=6)
    q = Query.from_text("x", 6)
    fine = kv.prefill(kv.build_sequence(video, q.embedding))
    coarse = kv.pool_cache(fine, 4)
    scorer = InnerProductScorer()
    fs, cs = scorer.score(q, fine), scorer.score(q, coarse)
    want = [fs[i:i + 4].mean() for i in range(0, 23, 4)]
    assert np.allclose(cs, want, atol=1e-12)


def test_interval_clamped_into_window():
    # fine scores rise with time, so the peak is the frame sitting on the window's closing edge
    scorer = FixedScorer(coarse=[0, 0, 9, 0], fine=lambda c: c.times[c.visual_mask].copy())
    cfg = GroundingConfig(margin=0, max_frames=None)
    res = ground_progressive(_video(16), _query(), scorer, cfg)
    assert res.window.interval == TimeInterval(8, 12)
    assert res.interval == TimeInterval(10, 12)  # run [10, 13] cut at the window end
    edge = ground_progressive(_video(16), _query(), scorer, GroundingConfig(margin=0, theta=0.9, max_frames=None))
    assert edge.interval == TimeInterval(11, 12)  # run [12, 13] lies outside; last frame period kept


def test_progressive_trace_counts():
    res = ground_progressive(_video(300), _query(), FixedScorer(coarse=np.eye(75)[40], fine=lambda c: c.times[c.visual_mask] * 0 + 1),
                             GroundingConfig(margin=0, max_frames=None))
    assert res.trace.stage1_tokens == 75
    assert res.trace.stage2_tokens == 5  # closed window [160, 164]
    assert res.trace.single_stage_tokens == 300
    assert res.trace.record() == {"stage1_tokens": 75, "stage2_tokens": 5}


def test_single_stage_budget_subsamples():
    res = ground_single_stage(_video(300), _query(), InnerProductScorer(), budget=105)
    assert res.mode == "single"
    assert res.trace.stage1_tokens == 0
    assert res.trace.stage2_tokens == 100  # stride 3
    assert res.window.interval == TimeInterval(0, 300)


def test_max_frames_cap_applies():
    res = ground_progressive(_video(900), _query(), InnerProductScorer(), GroundingConfig(max_frames=300))
    assert res.trace.single_stage_tokens == 300
    assert res.trace.stage1_tokens == 75


def test_grounding_is_deterministic():
    s = make_corpus(1, EventSpec(noise=0.1, n_distractors=1), seed=5)[0]
    a = ground_progressive(s.video, s.query, InnerProductScorer())
    b = ground_progressive(s.video, s.query, InnerProductScorer())
    assert a.interval == b.interval and a.trace == b.trace


def test_noiseless_event_recovered():
    for s in make_corpus(20, EventSpec(), seed=1):
        res = ground_progressive(s.video, s.query, InnerProductScorer())
        assert iou(res.interval, s.gt) == 1.0


def test_planted_event_40_50():
    q = embed_text("find it", 32)
    rng = np.random.default_rng(0)
    frames = rng.standard_normal((300, 32)) * 0.1
    frames -= np.outer(frames @ q, q)
    frames[40:50] += q
    res = ground_progressive(kv.FrameSequence("v", frames), Query("find it", q), InnerProductScorer())
    assert iou(res.interval, TimeInterval(40, 50)) >= 0.7


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.one_of(st.none(), st.integers(0, 3)),
       st.floats(0, 1), st.floats(0, 1))
def test_containment_on_random_inputs(seed, factor, margin, delta, theta):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 150))
    video = kv.FrameSequence("v", rng.standard_normal((n, 5)), fps=float(rng.choice([0.5, 1.0, 2.0])))
    cfg = GroundingConfig(pool_factor=factor, margin=margin, delta=delta, theta=theta, max_frames=None)
    res = ground_progressive(video, Query.from_text(str(seed), 5), InnerProductScorer(), cfg)
    assert res.window.interval.contains(res.interval)
    assert 0 <= res.interval.start_s and res.interval.end_s <= video.duration_s


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_factor_one_unbounded_matches_single_stage(seed):
    rng = np.random.default_rng(seed)
    video = kv.FrameSequence("v", rng.standard_normal((int(rng.integers(2, 100)), 6)),
                             group_size=int(rng.integers(1, 6)))
    q = Query.from_text(str(seed), 6)
    cfg = GroundingConfig(pool_factor=1, margin=None, max_frames=None)
    assert ground_progressive(video, q, InnerProductScorer(), cfg).interval == \
        ground_single_stage(video, q, InnerProductScorer(), cfg).interval


def test_remote_scorer_interval_response():
    seen = []

    def transport(req):
        seen.append(req)
        return ScoreResponse(interval=[20.0, 30.0])

    res = ground_progressive(_video(120), _query(), RemoteScorer(transport), GroundingConfig(max_frames=None))
    assert res.interval == TimeInterval(20, 30)
    assert seen[0].frame_times[0] == 0.0 and seen[0].query_text == "what happens"


def test_remote_scorer_validates_response():
    fine = kv.prefill(kv.build_sequence(_video(8), _query().embedding))
    with pytest.raises(ValueError):
        RemoteScorer(lambda r: ScoreResponse(scores=[1.0])).score(_query(), fine)
    with pytest.raises(ValueError):
        RemoteScorer(lambda r: ScoreResponse()).score(_query(), fine)
    with pytest.raises(RuntimeError):
        get_scorer("remote").score(_query(), fine)
    with pytest.raises(ValueError):
        get_scorer("nope")


def test_options_enter_prompt_embedding():
    q = Query.from_text("pick one", 8, ["red", "blue"])
    assert np.array_equal(q.prompt_embedding(False), q.embedding)
    assert not np.allclose(q.prompt_embedding(True), q.embedding)


def test_config_validation():
    for bad in (dict(pool_factor=0), dict(theta=1.5), dict(delta=-0.1), dict(margin=-1)):
        with pytest.raises(ValueError):
            GroundingConfig(**bad)
