"""Two-stage coarse-to-fine grounding and the single-stage baseline.

Stage 1 scores the pooled cache and decodes a coarse window around the best
super-group. Stage 2 reloads the fine entries inside that window and decodes
the final interval as the above-threshold run containing the peak frame.

Decisions are taken on scores rescaled to ``(s - min) / (peak - min)``, so
adding a constant to every score never changes the outcome.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import cache as kv
from .intervals import TimeInterval


def embed_text(text: str, dim: int) -> np.ndarray:
    """Deterministic unit vector for a piece of text (stand-in text encoder)."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass
class Query:
    text: str
    embedding: np.ndarray
    options: list[str] | None = None

    def __post_init__(self) -> None:
        self.embedding = np.asarray(self.embedding, dtype=np.float64)

    @classmethod
    def from_text(cls, text: str, dim: int, options: Sequence[str] | None = None) -> "Query":
        return cls(text, embed_text(text, dim), list(options) if options else None)

    def prompt_embedding(self, with_options: bool = False) -> np.ndarray:
        # options enter the prompt by averaging their embeddings into the query
        if not with_options or not self.options:
            return self.embedding
        dim = self.embedding.shape[0]
        rows = [self.embedding] + [embed_text(o, dim) for o in self.options]
        return np.mean(rows, axis=0)


class Scorer(Protocol):
    def score(self, query: Query, cache: kv.LayerCache) -> np.ndarray:
        """One finite relevance value per visual entry of ``cache``, in cache order."""
        ...


class InnerProductScorer:
    """Scores visual keys by their inner product with the cached query keys.

    Averaged over layers. Being linear, the score of a pooled entry is exactly
    the mean of its members' scores (up to rounding).
    """

    name = "synthetic"

    def score(self, query: Query, cache: kv.LayerCache) -> np.ndarray:
        vis = cache.visual_mask
        qrows = cache.kinds == kv.QUERY
        total = np.zeros(int(vis.sum()))
        for keys in cache.keys:
            if qrows.any():
                qk = keys[qrows].mean(axis=0)
            else:
                qk = query.embedding
            total = total + keys[vis] @ qk
        return total / cache.layer_count


@dataclass
class ScoreRequest:
    """Payload sent to a remote scoring backend."""

    video_id: str
    query_text: str
    options: list[str] | None
    window: list[float]
    frame_times: list[float]


@dataclass
class ScoreResponse:
    """Either per-frame scores or a single interval."""

    scores: list[float] | None = None
    interval: list[float] | None = None


class RemoteScorer:
    """Adapter that forwards scoring to an external service via ``transport``.

    An interval response is turned into indicator scores (1 inside, 0 outside).
    """

    name = "remote"

    def __init__(self, transport: Callable[[ScoreRequest], ScoreResponse] | None = None):
        self.transport = transport

    def score(self, query: Query, cache: kv.LayerCache) -> np.ndarray:
        if self.transport is None:
            raise RuntimeError("no transport configured for the remote scorer")
        vis = cache.visual_mask
        times = cache.times[vis]
        ends = cache.span_end[vis]
        req = ScoreRequest(
            video_id=cache.video_id,
            query_text=query.text,
            options=query.options,
            window=[float(times[0]), float(ends[-1])],
            frame_times=[float(t) for t in times],
        )
        resp = self.transport(req)
        if resp.scores is not None:
            out = np.asarray(resp.scores, dtype=np.float64)
            if out.shape != times.shape or not np.all(np.isfinite(out)):
                raise ValueError("remote scorer returned malformed scores")
            return out
        if resp.interval is not None:
            s, e = resp.interval
            return ((times < e) & (ends > s)).astype(np.float64)
        raise ValueError("remote scorer returned neither scores nor an interval")


SCORERS: dict[str, Callable[[], Scorer]] = {
    "synthetic": InnerProductScorer,
    "remote": RemoteScorer,
}


def get_scorer(name: str) -> Scorer:
    try:
        return SCORERS[name]()
    except KeyError:
        raise ValueError(f"unknown scorer {name!r}; known: {sorted(SCORERS)}") from None


@dataclass
class GroundingConfig:
    pool_factor: int = 4
    theta: float = 0.5
    delta: float = 0.2
    margin: int | None = 1  # None: unbounded
    max_frames: int | None = 800
    with_options: bool = False
    prefill: kv.PrefillParams = field(default_factory=kv.PrefillParams)

    def __post_init__(self) -> None:
        if self.pool_factor < 1:
            raise ValueError("pool_factor must be >= 1")
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must be in [0, 1]")
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must be in [0, 1]")
        if self.margin is not None and self.margin < 0:
            raise ValueError("margin must be >= 0")


@dataclass
class CoarseWindow:
    interval: TimeInterval
    group_scores: np.ndarray
    peak_index: int
    first_group: int
    last_group: int
    degenerate: bool = False


@dataclass
class GroundingTrace:
    stage1_tokens: int
    stage2_tokens: int
    single_stage_tokens: int
    coarse_scores: list[float]
    fine_scores: list[float]
    degenerate_window: bool = False

    def record(self) -> dict:
        return {"stage1_tokens": self.stage1_tokens, "stage2_tokens": self.stage2_tokens}


@dataclass
class GroundingResult:
    window: CoarseWindow
    interval: TimeInterval
    mode: str
    trace: GroundingTrace


def _rescale(scores: np.ndarray) -> np.ndarray | None:
    lo, hi = scores.min(), scores.max()
    if not hi > lo:
        return None
    return (scores - lo) / (hi - lo)


def _full_span(duration_s: float) -> TimeInterval:
    return TimeInterval(0.0, duration_s)


def ground_coarse(
    coarse: kv.LayerCache,
    q: Query,
    scorer: Scorer,
    delta: float = 0.2,
    margin: int | None = 1,
) -> CoarseWindow:
    if coarse.granularity != kv.COARSE:
        raise ValueError("ground_coarse needs a coarse cache")
    scores = np.asarray(scorer.score(q, coarse), dtype=np.float64)
    n = len(scores)
    if n != coarse.n_visual or not np.all(np.isfinite(scores)):
        raise ValueError("scorer output does not match the cache")
    z = _rescale(scores)
    if z is None:
        return CoarseWindow(_full_span(coarse.duration_s), scores, 0, 0, n - 1, degenerate=True)
    peak = int(np.argmax(z))
    lo = hi = peak
    while lo > 0 and z[lo - 1] >= 1.0 - delta:
        lo -= 1
    while hi < n - 1 and z[hi + 1] >= 1.0 - delta:
        hi += 1
    if margin is None:
        lo, hi = 0, n - 1
    else:
        lo, hi = max(0, lo - margin), min(n - 1, hi + margin)
    if lo == 0 and hi == n - 1:
        interval = _full_span(coarse.duration_s)
    else:
        starts = coarse.times[coarse.visual_mask]
        ends = coarse.span_end[coarse.visual_mask]
        interval = TimeInterval(max(0.0, starts[lo]), min(coarse.duration_s, ends[hi]))
    return CoarseWindow(interval, scores, peak, lo, hi)


def _fine_run(restricted: kv.LayerCache, q: Query, scorer: Scorer, theta: float):
    if restricted.n_visual == 0:
        raise ValueError("restricted cache holds no frames")
    scores = np.asarray(scorer.score(q, restricted), dtype=np.float64)
    if len(scores) != restricted.n_visual or not np.all(np.isfinite(scores)):
        raise ValueError("scorer output does not match the cache")
    z = _rescale(scores)
    if z is None:
        lo, hi = 0, len(scores) - 1
    else:
        peak = int(np.argmax(z))
        lo = hi = peak
        while lo > 0 and z[lo - 1] >= theta:
            lo -= 1
        while hi < len(z) - 1 and z[hi + 1] >= theta:
            hi += 1
    times = restricted.times[restricted.visual_mask]
    ends = restricted.span_end[restricted.visual_mask]
    return TimeInterval(times[lo], ends[hi]), scores


def ground_fine(restricted: kv.LayerCache, q: Query, scorer: Scorer, theta: float = 0.5) -> TimeInterval:
    return _fine_run(restricted, q, scorer, theta)[0]


def _clamp(interval: TimeInterval, window: TimeInterval, period: float) -> TimeInterval:
    s = max(interval.start_s, window.start_s)
    e = min(interval.end_s, window.end_s)
    if e <= s:
        # run starts on the window's closing edge
        e = window.end_s
        s = max(window.start_s, e - period)
    return TimeInterval(s, e)


def _prepare(video: kv.FrameSequence, q: Query, config: GroundingConfig) -> kv.LayerCache:
    if config.max_frames is not None:
        video = kv.subsample(video, config.max_frames)
    seq = kv.build_sequence(video, q.prompt_embedding(config.with_options))
    return kv.prefill(seq, config.prefill)


def ground_progressive(
    video: kv.FrameSequence, q: Query, scorer: Scorer, config: GroundingConfig | None = None
) -> GroundingResult:
    config = config or GroundingConfig()
    fine = _prepare(video, q, config)
    coarse = kv.pool_cache(fine, config.pool_factor)
    window = ground_coarse(coarse, q, scorer, config.delta, config.margin)
    restricted = kv.select_window(fine, window.interval)
    raw, fine_scores = _fine_run(restricted, q, scorer, config.theta)
    interval = _clamp(raw, window.interval, 1.0 / fine.fps)
    budget = kv.token_budget(fine, coarse, restricted)
    trace = GroundingTrace(
        stage1_tokens=budget.stage1,
        stage2_tokens=budget.stage2,
        single_stage_tokens=budget.single_stage,
        coarse_scores=window.group_scores.tolist(),
        fine_scores=fine_scores.tolist(),
        degenerate_window=window.degenerate,
    )
    return GroundingResult(window, interval, "progressive", trace)


def ground_single_stage(
    video: kv.FrameSequence,
    q: Query,
    scorer: Scorer,
    config: GroundingConfig | None = None,
    budget: int | None = None,
) -> GroundingResult:
    """Ground over the whole fine cache at once.

    ``budget`` caps the number of visual entries by uniform subsampling, for
    comparisons at equal token cost.
    """
    config = config or GroundingConfig()
    if budget is not None:
        video = kv.subsample(video, budget)
    fine = _prepare(video, q, config)
    full = _full_span(fine.duration_s)
    raw, fine_scores = _fine_run(fine, q, scorer, config.theta)
    interval = _clamp(raw, full, 1.0 / fine.fps)
    window = CoarseWindow(full, np.zeros(0), -1, 0, 0)
    trace = GroundingTrace(
        stage1_tokens=0,
        stage2_tokens=fine.n_visual,
        single_stage_tokens=fine.n_visual,
        coarse_scores=[],
        fine_scores=fine_scores.tolist(),
    )
    return GroundingResult(window, interval, "single", trace)


def progressive_budget(n_frames: int, factor: int, window_frames: int) -> int:
    """Visual entries attended by the two-stage procedure."""
    return math.ceil(n_frames / factor) + window_frames
