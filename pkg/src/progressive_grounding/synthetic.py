"""Synthetic videos with a planted target event.

Each video gets a query whose embedding is ``embed_text(query_text)``. Frames
inside the target span carry ``signal`` along that direction, distractor spans
carry ``distractor_amp``, everything else carries only noise. A random
component orthogonal to the query gives frames some content of their own
without touching inner-product scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cache import FrameSequence
from .grounding import Query, embed_text
from .intervals import TimeInterval

TASK_TYPES = [f"task_{i:02d}" for i in range(12)]
VIDEO_CATEGORIES = [f"category_{i:02d}" for i in range(35)]


@dataclass(frozen=True)
class EventSpec:
    n_frames: int = 300
    fps: float = 1.0
    dim: int = 32
    group_size: int = 4
    event_len: tuple[int, int] = (8, 40)
    signal: float = 1.0
    noise: float = 0.0
    n_distractors: int = 0
    distractor_amp: float = 0.6
    distractor_len: tuple[int, int] = (10, 20)
    distractor_gap: int = 12

    def __post_init__(self) -> None:
        if not self.signal > self.noise:
            raise ValueError(
                f"signal amplitude {self.signal} must exceed noise {self.noise}"
            )
        if self.event_len[0] < 1 or self.event_len[1] > self.n_frames:
            raise ValueError("event length range does not fit the video")


@dataclass
class SyntheticSample:
    sample_id: str
    video: FrameSequence
    query: Query
    gt: TimeInterval
    distractors: list[TimeInterval] = field(default_factory=list)
    task_type: str = TASK_TYPES[0]
    video_category: str = VIDEO_CATEGORIES[0]


def _orthogonal_content(rng: np.random.Generator, q: np.ndarray, n: int) -> np.ndarray:
    r = rng.standard_normal((n, q.shape[0]))
    r -= np.outer(r @ q, q)
    norms = np.linalg.norm(r, axis=1, keepdims=True)
    return r / np.where(norms > 0, norms, 1.0)


def _place_distractors(rng, spec: EventSpec, event: tuple[int, int]) -> list[tuple[int, int]]:
    taken = [event]
    out = []
    for _ in range(spec.n_distractors):
        for _attempt in range(100):
            length = int(rng.integers(spec.distractor_len[0], spec.distractor_len[1] + 1))
            start = int(rng.integers(0, spec.n_frames - length + 1))
            end = start + length
            if all(end + spec.distractor_gap <= a or start >= b + spec.distractor_gap for a, b in taken):
                taken.append((start, end))
                out.append((start, end))
                break
    return sorted(out)


def make_sample(seed: int | np.random.SeedSequence, spec: EventSpec, sample_id: str) -> SyntheticSample:
    rng = np.random.default_rng(seed)
    query_text = f"Find the moment needed to answer question {sample_id}"
    q = embed_text(query_text, spec.dim)
    n = spec.n_frames
    length = int(rng.integers(spec.event_len[0], spec.event_len[1] + 1))
    start = int(rng.integers(0, n - length + 1))
    amp = np.zeros(n)
    amp[start:start + length] = spec.signal
    distractors = _place_distractors(rng, spec, (start, start + length))
    for a, b in distractors:
        amp[a:b] = spec.distractor_amp
    if spec.noise > 0:
        amp = amp + spec.noise * rng.standard_normal(n)
    frames = amp[:, None] * q[None, :] + _orthogonal_content(rng, q, n)
    video = FrameSequence(sample_id, frames, fps=spec.fps, group_size=spec.group_size)
    p = 1.0 / spec.fps
    return SyntheticSample(
        sample_id=sample_id,
        video=video,
        query=Query(query_text, q),
        gt=TimeInterval(start * p, (start + length) * p),
        distractors=[TimeInterval(a * p, b * p) for a, b in distractors],
        task_type=TASK_TYPES[int(rng.integers(len(TASK_TYPES)))],
        video_category=VIDEO_CATEGORIES[int(rng.integers(len(VIDEO_CATEGORIES)))],
    )


def make_corpus(n: int, spec: EventSpec | None = None, seed: int = 0) -> list[SyntheticSample]:
    """``n`` independent samples; sample ``i`` depends only on ``(seed, i)``."""
    spec = spec or EventSpec()
    children = np.random.SeedSequence(seed).spawn(n)
    return [make_sample(children[i], spec, f"syn-{seed}-{i:05d}") for i in range(n)]


@dataclass(frozen=True)
class ClipSpec:
    """Short annotated clips for the curation pipeline.

    Each clip gets three expert votes jittered around its planted event. A
    fraction of clips is corrupted on purpose: ``outlier_rate`` makes experts
    disagree, ``unanswerable_rate`` moves the planted signal away from the
    annotated target, ``missing_signal_rate`` leaves no signal record (the
    verifier cannot decide), and ``duplicate_rate`` reuses the previous clip's
    query so the target is no longer unique once clips are packed together.
    """

    duration_range: tuple[int, int] = (50, 150)
    event_len: tuple[int, int] = (6, 20)
    fps: float = 1.0
    dim: int = 64
    n_experts: int = 3
    jitter_s: float = 1.5
    outlier_rate: float = 0.1
    unanswerable_rate: float = 0.05
    missing_signal_rate: float = 0.03
    duplicate_rate: float = 0.05


def make_clip_corpus(n: int, spec: ClipSpec | None = None, seed: int = 0):
    """Return ``[(ClipRecord, frames)]`` for ``n`` clips; ``feature_path`` is left unset."""
    from .curation import ClipRecord, ExpertVote

    spec = spec or ClipSpec()
    children = np.random.SeedSequence(seed).spawn(n)
    out = []
    prev_query = None
    for i in range(n):
        rng = np.random.default_rng(children[i])
        clip_id = f"clip-{seed}-{i:05d}"
        dur = int(rng.integers(spec.duration_range[0], spec.duration_range[1] + 1))
        length = int(rng.integers(spec.event_len[0], min(spec.event_len[1], dur) + 1))
        start = int(rng.integers(0, dur - length + 1))
        event = TimeInterval(start / spec.fps, (start + length) / spec.fps)
        query = f"What happens in clip {clip_id}?"
        if prev_query is not None and rng.random() < spec.duplicate_rate:
            query = prev_query
        prev_query = query

        votes = []
        outlier = rng.random() < spec.outlier_rate
        for k in range(spec.n_experts):
            if outlier and k > 0:
                a = float(rng.uniform(0, dur - 2))
                span = TimeInterval(a, float(rng.uniform(a + 1, dur)))
            else:
                a = max(0.0, event.start_s + rng.uniform(-spec.jitter_s, spec.jitter_s))
                b = min(float(dur), event.end_s + rng.uniform(-spec.jitter_s, spec.jitter_s))
                span = TimeInterval(a, max(b, a + 1.0)) if a + 1.0 <= dur else event
            votes.append(ExpertVote(f"expert_{k}", span))

        signal: TimeInterval | None = event
        roll = rng.random()
        if roll < spec.missing_signal_rate:
            signal = None
        elif roll < spec.missing_signal_rate + spec.unanswerable_rate:
            signal = _away_from(rng, event, dur, length)

        q = embed_text(query, spec.dim)
        amp = np.zeros(int(round(dur * spec.fps)))
        planted = signal if signal is not None else event
        amp[int(round(planted.start_s * spec.fps)):int(round(planted.end_s * spec.fps))] = 1.0
        frames = amp[:, None] * q[None, :] + _orthogonal_content(rng, q, len(amp))
        clip = ClipRecord(
            clip_id=clip_id,
            duration_s=float(dur),
            caption=f"synthetic clip {i}",
            query=query,
            options=["yes", "no", "maybe", "unclear"],
            answer="A",
            votes=tuple(votes),
            source_tag="synthetic",
            fps=spec.fps,
            signal=signal,
            task_type=TASK_TYPES[int(rng.integers(len(TASK_TYPES)))],
            video_category=VIDEO_CATEGORIES[int(rng.integers(len(VIDEO_CATEGORIES)))],
        )
        out.append((clip, frames))
    return out


def _away_from(rng, event: TimeInterval, dur: int, length: int) -> TimeInterval | None:
    """A span of ``length`` frames disjoint from ``event``, if the clip has room."""
    room = [(0, int(event.start_s) - length), (int(event.end_s), dur - length)]
    room = [(a, b) for a, b in room if b >= a]
    if not room:
        return None
    a, b = room[int(rng.integers(len(room)))]
    s = int(rng.integers(a, b + 1))
    return TimeInterval(float(s), float(s + length))
