"""Building long-video grounding data from annotated short clips.

The pipeline filters clips on task type, expert agreement and answerability,
packs the survivors into long videos with remapped targets, keeps only
samples whose target is unique in the long video, and optionally caps bins
for balance. Every input clip ends up kept, dropped with a reason, or
quarantined when a hook fails; ``PipelineReport.reconciles`` checks that.

Hooks are plain callables:

* grounder ``(sample, segment) -> bool``: does ``segment`` hold the target?
* verifier ``(sample) -> bool``: does ``sample.gt`` hold enough to answer?
"""

from __future__ import annotations

import concurrent.futures as cf
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .evaluation import duration_bucket
from .intervals import TimeInterval, center_bin, iou
from .manifest import GroundingSample

log = logging.getLogger(__name__)

EXCLUDED_TASK_TYPES = frozenset({"multilingual", "summarization", "event_ordering"})


class HookFailure(Exception):
    """A hook raised, timed out, or was unavailable for a sample."""


@dataclass(frozen=True)
class ExpertVote:
    expert_id: str
    interval: TimeInterval


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    duration_s: float
    caption: str = ""
    query: str = ""
    options: list[str] | None = None
    answer: str | None = None
    interval: TimeInterval | None = None
    votes: tuple[ExpertVote, ...] = ()
    source_tag: str = ""
    feature_path: str | None = None
    fps: float = 1.0
    signal: TimeInterval | None = None
    task_type: str = ""
    video_category: str = ""

    def __post_init__(self) -> None:
        if not self.duration_s > 0:
            raise ValueError(f"clip {self.clip_id}: duration must be positive")
        for span in [self.interval, self.signal] + [v.interval for v in self.votes]:
            if span is not None and span.end_s > self.duration_s + 1e-9:
                raise ValueError(f"clip {self.clip_id}: span {span.as_list()} exceeds the clip")

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"clip_id": self.clip_id, "duration_s": self.duration_s,
                               "caption": self.caption, "query": self.query}
        if self.options is not None:
            rec["options"] = list(self.options)
        if self.answer is not None:
            rec["answer"] = self.answer
        if self.interval is not None:
            rec["interval"] = self.interval.as_list()
        if self.votes:
            rec["votes"] = [{"expert_id": v.expert_id, "interval": v.interval.as_list()} for v in self.votes]
        rec.update(source_tag=self.source_tag, feature_path=self.feature_path, fps=self.fps)
        if self.signal is not None:
            rec["signal"] = self.signal.as_list()
        rec.update(task_type=self.task_type, video_category=self.video_category)
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "ClipRecord":
        def span(key):
            return TimeInterval.from_pair(rec[key]) if rec.get(key) is not None else None

        return cls(
            clip_id=str(rec["clip_id"]),
            duration_s=float(rec["duration_s"]),
            caption=rec.get("caption", ""),
            query=rec.get("query", ""),
            options=rec.get("options"),
            answer=rec.get("answer"),
            interval=span("interval"),
            votes=tuple(ExpertVote(str(v["expert_id"]), TimeInterval.from_pair(v["interval"]))
                        for v in rec.get("votes", ())),
            source_tag=rec.get("source_tag", ""),
            feature_path=rec.get("feature_path"),
            fps=float(rec.get("fps", 1.0)),
            signal=span("signal"),
            task_type=rec.get("task_type", ""),
            video_category=rec.get("video_category", ""),
        )


# -- consensus -----------------------------------------------------------------

@dataclass(frozen=True)
class ConsensusResult:
    retained: bool
    interval: TimeInterval | None
    min_pairwise_iou: float


def expert_consensus(votes: Sequence[ExpertVote], min_iou: float = 0.5) -> ConsensusResult:
    """Keep the target only if every pair of experts overlaps with IoU above ``min_iou``.

    The retained interval takes the median of each endpoint across experts.
    """
    if len(votes) < 2:
        raise ValueError(f"consensus needs at least 2 votes, got {len(votes)}")
    worst = min(iou(a.interval, b.interval) for a, b in itertools.combinations(votes, 2))
    if not worst > min_iou:
        return ConsensusResult(False, None, worst)
    starts = sorted(v.interval.start_s for v in votes)
    ends = sorted(v.interval.end_s for v in votes)
    return ConsensusResult(True, TimeInterval(float(np.median(starts)), float(np.median(ends))), worst)


# -- concatenation -------------------------------------------------------------

def pack_durations(durations: Sequence[float], target_s: float = 500.0) -> list[list[int]]:
    """Group consecutive items so each group's total lands near ``target_s``.

    An item joins the open group when that brings the total closer to the
    target (ties join); otherwise the group closes and a new one starts.
    """
    groups: list[list[int]] = []
    current: list[int] = []
    total = 0.0
    for i, d in enumerate(durations):
        if current and abs(total + d - target_s) > abs(total - target_s):
            groups.append(current)
            current, total = [], 0.0
        current.append(i)
        total += d
    if current:
        groups.append(current)
    return groups


@dataclass(frozen=True)
class Placement:
    clip: ClipRecord
    offset_s: float
    interval: TimeInterval  # target in clip-local time


@dataclass
class LongVideo:
    video_id: str
    placements: list[Placement]

    @property
    def duration_s(self) -> float:
        return sum(p.clip.duration_s for p in self.placements)

    @property
    def fps(self) -> float:
        rates = {p.clip.fps for p in self.placements}
        if len(rates) != 1:
            raise ValueError(f"{self.video_id}: clips with mixed frame rates {sorted(rates)}")
        return rates.pop()

    def samples(self) -> list[GroundingSample]:
        dur = self.duration_s
        out = []
        for p in self.placements:
            c = p.clip
            out.append(GroundingSample(
                sample_id=c.clip_id,
                video_id=self.video_id,
                duration_s=dur,
                query=c.query,
                gt=p.interval.shifted(p.offset_s),
                task_type=c.task_type,
                video_category=c.video_category,
                options=c.options,
                fps=c.fps,
                signal=c.signal.shifted(p.offset_s) if c.signal else None,
                answer=c.answer,
            ))
        return out


def concat_clips(
    clips: Sequence[ClipRecord],
    intervals: Sequence[TimeInterval] | None = None,
    target_s: float = 500.0,
    id_prefix: str = "long",
) -> list[LongVideo]:
    """Pack clips in order into long videos; each clip's target moves by its offset.

    ``intervals`` overrides the per-clip targets (for example with consensus
    results); by default each clip's own ``interval`` is used.
    """
    if not clips:
        raise ValueError("no clips to concatenate")
    if intervals is None:
        intervals = [c.interval for c in clips]
    if any(iv is None for iv in intervals):
        raise ValueError("every clip needs a target interval")
    videos = []
    for g, members in enumerate(pack_durations([c.duration_s for c in clips], target_s)):
        offset = 0.0
        placements = []
        for i in members:
            placements.append(Placement(clips[i], offset, intervals[i]))
            offset += clips[i].duration_s
        videos.append(LongVideo(f"{id_prefix}-{g:04d}", placements))
    return videos


# -- filters -------------------------------------------------------------------

def segment_video(duration_s: float, segment_s: float = 30.0) -> list[TimeInterval]:
    if not segment_s > 0:
        raise ValueError("segment length must be positive")
    edges = list(np.arange(0.0, duration_s, segment_s)) + [duration_s]
    return [TimeInterval(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


@dataclass(frozen=True)
class UniquenessOutcome:
    keep: bool
    flags: tuple[bool, ...]


def uniqueness_filter(segments: Sequence[TimeInterval], query: Any, grounder: Callable) -> UniquenessOutcome:
    """Keep iff exactly one segment is judged to hold the target."""
    flags = []
    for seg in segments:
        try:
            flags.append(bool(grounder(query, seg)))
        except Exception as exc:
            raise HookFailure(f"grounder failed on segment {seg.as_list()}: {exc}") from exc
    return UniquenessOutcome(sum(flags) == 1, tuple(flags))


def validate_information(sample: GroundingSample, verifier: Callable | None) -> bool:
    if verifier is None:
        raise HookFailure("no verifier available")
    try:
        return bool(verifier(sample))
    except Exception as exc:
        raise HookFailure(f"verifier failed: {exc}") from exc


def task_type_allowed(task_type: str, excluded: Iterable[str] = EXCLUDED_TASK_TYPES) -> bool:
    return task_type not in set(excluded)


class SignalVerifier:
    """Answerable iff the planted signal overlaps the annotated target."""

    def __call__(self, sample: GroundingSample) -> bool:
        if sample.signal is None:
            raise LookupError(f"{sample.sample_id}: no planted signal recorded")
        return sample.gt.intersection_length(sample.signal) > 0


class SignalGrounder:
    """A segment holds the target iff it contains the midpoint of a span for the same query.

    ``spans`` maps ``(video_id, query)`` to every planted span carrying that
    query, so duplicated queries in one long video light up several segments.
    """

    def __init__(self, spans: dict[tuple[str, str], list[TimeInterval]]):
        self.spans = spans

    def __call__(self, sample: GroundingSample, segment: TimeInterval) -> bool:
        key = (sample.video_id, sample.query)
        if key not in self.spans:
            raise LookupError(f"{sample.sample_id}: no planted spans known")
        return any(
            segment.start_s <= s.midpoint < segment.end_s
            or (segment.end_s == sample.duration_s and s.midpoint == segment.end_s)
            for s in self.spans[key]
        )

    @classmethod
    def from_videos(cls, videos: Iterable[LongVideo]) -> "SignalGrounder":
        spans: dict[tuple[str, str], list[TimeInterval]] = defaultdict(list)
        for v in videos:
            for s in v.samples():
                if s.signal is not None:
                    spans[(v.video_id, s.query)].append(s.signal)
        return cls(dict(spans))


# -- balancing -----------------------------------------------------------------

DIMENSIONS = ("duration", "center", "task_type", "category")


def bin_key(sample: GroundingSample, dimensions: Sequence[str],
            duration_boundaries: tuple[float, float] = (180.0, 900.0)) -> tuple:
    key = []
    for dim in dimensions:
        if dim == "duration":
            key.append(duration_bucket(sample.duration_s, duration_boundaries))
        elif dim == "center":
            key.append(center_bin(sample.center, 10))
        elif dim == "task_type":
            key.append(sample.task_type)
        elif dim == "category":
            key.append(sample.video_category)
        else:
            raise ValueError(f"unknown balance dimension {dim!r}; known: {DIMENSIONS}")
    return tuple(key)


def balance_bins(
    samples: Sequence[GroundingSample],
    dimensions: Sequence[str],
    cap: int,
    seed: int = 0,
    duration_boundaries: tuple[float, float] = (180.0, 900.0),
) -> list[GroundingSample]:
    """Randomly down-sample every bin above ``cap``; input order is preserved."""
    if cap < 0:
        raise ValueError("cap must be >= 0")
    if not samples:
        return []
    bins: dict[tuple, list[int]] = defaultdict(list)
    for i, s in enumerate(samples):
        bins[bin_key(s, dimensions, duration_boundaries)].append(i)
    rng = np.random.default_rng(seed)
    keep: set[int] = set()
    for key in sorted(bins, key=repr):
        members = bins[key]
        if len(members) <= cap:
            keep.update(members)
        else:
            chosen = rng.choice(len(members), size=cap, replace=False)
            keep.update(members[j] for j in chosen)
    return [s for i, s in enumerate(samples) if i in keep]


# -- pipeline ------------------------------------------------------------------

@dataclass
class CurationConfig:
    min_iou: float = 0.5
    target_s: float = 500.0
    segment_s: float = 30.0
    excluded_task_types: tuple[str, ...] = tuple(sorted(EXCLUDED_TASK_TYPES))
    balance_dimensions: tuple[str, ...] = ()
    balance_cap: int | None = None
    duration_boundaries: tuple[float, float] = (180.0, 900.0)
    seed: int = 0
    hook_timeout_s: float = 30.0
    workers: int = 1
    id_prefix: str = "long"


@dataclass
class PipelineReport:
    total: int
    kept: list[str] = field(default_factory=list)
    dropped: dict[str, list[str]] = field(default_factory=dict)
    quarantined: list[dict] = field(default_factory=list)
    rejected_consensus: list[dict] = field(default_factory=list)

    def drop(self, reason: str, sample_id: str) -> None:
        self.dropped.setdefault(reason, []).append(sample_id)

    def quarantine(self, sample_id: str, stage: str, reason: str) -> None:
        self.quarantined.append({"sample_id": sample_id, "stage": stage, "reason": reason})

    @property
    def n_dropped(self) -> int:
        return sum(len(v) for v in self.dropped.values())

    @property
    def reconciles(self) -> bool:
        ids = self.kept + [i for v in self.dropped.values() for i in v] + [q["sample_id"] for q in self.quarantined]
        return len(ids) == self.total and len(set(ids)) == self.total

    def summary(self) -> dict:
        return {
            "total": self.total,
            "kept": len(self.kept),
            "dropped": self.n_dropped,
            "quarantined": len(self.quarantined),
            "dropped_by_reason": {k: len(v) for k, v in sorted(self.dropped.items())},
            "reconciles": self.reconciles,
        }

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "kept": self.kept,
            "dropped": {k: v for k, v in sorted(self.dropped.items())},
            "quarantined": self.quarantined,
            "rejected_consensus": self.rejected_consensus,
        }


def _call_all(fn: Callable, items: Sequence, timeout: float, workers: int) -> list[tuple[bool, Any]]:
    """Run ``fn`` on every item; return ``(ok, value_or_error_text)`` in input order."""
    out: list[tuple[bool, Any]] = []
    with cf.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(fn, item) for item in items]
        for fut in futures:
            try:
                out.append((True, fut.result(timeout=timeout)))
            except cf.TimeoutError:
                out.append((False, f"timed out after {timeout}s"))
            except Exception as exc:
                out.append((False, str(exc)))
    return out


@dataclass
class CurationResult:
    videos: list[LongVideo]
    samples: list[GroundingSample]
    report: PipelineReport


def run_pipeline(
    clips: Sequence[ClipRecord],
    config: CurationConfig | None = None,
    verifier: Callable | None = None,
    grounder: Callable | None = None,
) -> CurationResult:
    """Filter, pack and de-duplicate ``clips``; see the module docstring.

    With no ``grounder`` given, a ``SignalGrounder`` built from the packed
    videos is used. ``verifier`` defaults to ``SignalVerifier``.
    """
    config = config or CurationConfig()
    verifier = verifier if verifier is not None else SignalVerifier()
    report = PipelineReport(total=len(clips))
    ids = [c.clip_id for c in clips]
    if len(set(ids)) != len(ids):
        raise ValueError("clip ids must be unique")

    survivors: list[tuple[ClipRecord, TimeInterval]] = []
    for c in clips:
        if not task_type_allowed(c.task_type, config.excluded_task_types):
            report.drop("task_type", c.clip_id)
            continue
        if c.votes:
            res = expert_consensus(c.votes, config.min_iou)
            if not res.retained:
                report.drop("consensus", c.clip_id)
                report.rejected_consensus.append(
                    {"sample_id": c.clip_id, "min_pairwise_iou": res.min_pairwise_iou})
                continue
            target = res.interval
        elif c.interval is not None:
            target = c.interval
        else:
            report.drop("no_annotation", c.clip_id)
            continue
        survivors.append((c, target))

    local = [
        GroundingSample(sample_id=c.clip_id, video_id=c.clip_id, duration_s=c.duration_s,
                        query=c.query, gt=t, fps=c.fps, signal=c.signal)
        for c, t in survivors
    ]
    checks = _call_all(lambda s: validate_information(s, verifier), local,
                       config.hook_timeout_s, config.workers)
    answerable = []
    for (c, t), (ok, val) in zip(survivors, checks):
        if not ok:
            report.quarantine(c.clip_id, "validate_information", val)
        elif not val:
            report.drop("insufficient_information", c.clip_id)
        else:
            answerable.append((c, t))

    if not answerable:
        return CurationResult([], [], report)
    videos = concat_clips([c for c, _ in answerable], [t for _, t in answerable],
                          config.target_s, config.id_prefix)
    if grounder is None:
        grounder = SignalGrounder.from_videos(videos)
    candidates = [s for v in videos for s in v.samples()]

    def unique(sample: GroundingSample) -> bool:
        segs = segment_video(sample.duration_s, config.segment_s)
        return uniqueness_filter(segs, sample, grounder).keep

    verdicts = _call_all(unique, candidates, config.hook_timeout_s, config.workers)
    kept: list[GroundingSample] = []
    for s, (ok, val) in zip(candidates, verdicts):
        if not ok:
            report.quarantine(s.sample_id, "uniqueness_filter", val)
        elif not val:
            report.drop("not_unique", s.sample_id)
        else:
            kept.append(s)

    if config.balance_cap is not None and config.balance_dimensions:
        balanced = balance_bins(kept, config.balance_dimensions, config.balance_cap,
                                config.seed, config.duration_boundaries)
        chosen = {s.sample_id for s in balanced}
        for s in kept:
            if s.sample_id not in chosen:
                report.drop("balance", s.sample_id)
        kept = balanced

    report.kept = [s.sample_id for s in kept]
    if not report.reconciles:
        raise AssertionError("curation accounting does not reconcile")
    return CurationResult(videos, kept, report)
