"""Temporal augmentations applied jointly to frame times and targets.

Each transform takes a ``(sample, video)`` pair and returns a new pair. The
sample's manifest fields (``time_origin_s``, ``fps``, ``frame_range``,
``duration_s``) are kept in step with the video so that reloading the
augmented sample from its manifest record gives back the augmented video.
Frame features are never modified.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .cache import FrameSequence
from .intervals import TimeInterval
from .manifest import GroundingSample

SHIFT_RANGE = (4.0, 1004.0)
CUT_SPAN_RANGE = (10.0, 20.0)
SCALE_RANGE = (0.5, 2.0)

KINDS = ("shift", "cut", "scale")


@dataclass(frozen=True)
class AugmentationSpec:
    kind: str
    shift_offset_s: float | None = None
    cut_start_s: float | None = None
    cut_span_s: float | None = None
    scale_factor: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if self.kind == "shift":
            if self.shift_offset_s is None or not SHIFT_RANGE[0] <= self.shift_offset_s <= SHIFT_RANGE[1]:
                raise ValueError(f"shift offset must lie in {SHIFT_RANGE}")
        elif self.kind == "cut":
            if self.cut_span_s is None or not CUT_SPAN_RANGE[0] <= self.cut_span_s <= CUT_SPAN_RANGE[1]:
                raise ValueError(f"cut span must lie in {CUT_SPAN_RANGE}")
            if self.cut_start_s is None or self.cut_start_s < 0:
                raise ValueError("cut start must be >= 0")
        elif self.scale_factor is None or not self.scale_factor > 0:
            raise ValueError("scale factor must be positive")

    def record(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


class Discarded(Exception):
    """The augmentation removed the grounding target; drop the sample."""


def _check_pair(sample: GroundingSample, video: FrameSequence) -> None:
    if abs(sample.duration_s - video.duration_s) > 1e-9 * max(1.0, sample.duration_s):
        raise ValueError(f"{sample.sample_id}: sample and video durations disagree")


def _with_history(sample: GroundingSample, entry: dict) -> tuple[dict, ...]:
    return sample.augmentations + (entry,)


def shift(sample: GroundingSample, video: FrameSequence, offset: float, *, record: dict | None = None):
    if offset < 0:
        raise ValueError(f"shift offset must be >= 0, got {offset}")
    _check_pair(sample, video)
    new_video = FrameSequence(
        video.video_id, video.frames, fps=video.fps,
        frame_times=video.frame_times + offset,
        group_size=video.group_size, duration_s=video.duration_s + offset,
    )
    new_sample = sample.evolve(
        gt=sample.gt.shifted(offset),
        duration_s=sample.duration_s + offset,
        time_origin_s=sample.time_origin_s + offset,
        signal=sample.signal.shifted(offset) if sample.signal else None,
        augmentations=_with_history(sample, record or {"kind": "shift", "shift_offset_s": offset}),
    )
    return new_sample, new_video


def scale(sample: GroundingSample, video: FrameSequence, factor: float, *, record: dict | None = None):
    if not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    _check_pair(sample, video)
    new_video = FrameSequence(
        video.video_id, video.frames, fps=video.fps / factor,
        frame_times=video.frame_times * factor,
        group_size=video.group_size, duration_s=video.duration_s * factor,
    )
    new_sample = sample.evolve(
        gt=sample.gt.scaled(factor),
        duration_s=sample.duration_s * factor,
        fps=sample.fps / factor,
        time_origin_s=sample.time_origin_s * factor,
        signal=sample.signal.scaled(factor) if sample.signal else None,
        augmentations=_with_history(sample, record or {"kind": "scale", "scale_factor": factor}),
    )
    return new_sample, new_video


def _rebase(span: TimeInterval | None, window: TimeInterval) -> TimeInterval | None:
    if span is None:
        return None
    clipped = span.intersection(window)
    return clipped.shifted(-window.start_s) if clipped else None


def cut(sample: GroundingSample, video: FrameSequence, window: TimeInterval, *, record: dict | None = None):
    """Keep only the frames lying wholly inside ``window``, re-based to 0.

    Raises ``Discarded`` when the window does not overlap the target.
    """
    _check_pair(sample, video)
    if window.end_s > video.duration_s + 1e-9:
        raise ValueError(f"cut window {window.as_list()} exceeds the {video.duration_s}s video")
    t = video.frame_times
    keep = np.flatnonzero((t >= window.start_s - 1e-9) & (t + video.period <= window.end_s + 1e-9))
    if keep.size == 0:
        raise ValueError(f"cut window {window.as_list()} holds no frames")
    gt = _rebase(sample.gt, window)
    if gt is None:
        raise Discarded(f"{sample.sample_id}: cut window misses the target")
    i0, i1 = int(keep[0]), int(keep[-1]) + 1
    times = video.frame_times[i0:i1] - window.start_s
    new_video = FrameSequence(
        video.video_id, video.frames[i0:i1], fps=video.fps,
        frame_times=times, group_size=video.group_size, duration_s=window.length,
    )
    base = sample.frame_range[0] if sample.frame_range else 0
    new_sample = sample.evolve(
        gt=gt,
        duration_s=window.length,
        time_origin_s=float(times[0]),
        frame_range=(base + i0, base + i1),
        signal=_rebase(sample.signal, window),
        augmentations=_with_history(
            sample,
            record or {"kind": "cut", "cut_start_s": window.start_s, "cut_span_s": window.length},
        ),
    )
    return new_sample, new_video


def draw_spec(kind: str, sample: GroundingSample, rng: np.random.Generator, seed: int | None = None,
              scale_range: tuple[float, float] = SCALE_RANGE, value: float | None = None) -> AugmentationSpec:
    """Draw a concrete augmentation for ``sample`` from the sampling ranges.

    ``value`` pins the offset, span or factor instead of drawing it. Cut
    windows are placed so that they overlap the target when the video allows it.
    """
    if kind == "shift":
        offset = float(rng.uniform(*SHIFT_RANGE)) if value is None else float(value)
        return AugmentationSpec("shift", shift_offset_s=offset, seed=seed)
    if kind == "scale":
        lo, hi = scale_range
        k = float(math.exp(rng.uniform(math.log(lo), math.log(hi)))) if value is None else float(value)
        return AugmentationSpec("scale", scale_factor=k, seed=seed)
    if kind == "cut":
        span = float(rng.uniform(*CUT_SPAN_RANGE)) if value is None else float(value)
        if span > sample.duration_s:
            raise Discarded(f"{sample.sample_id}: video shorter than the cut span")
        lo = max(0.0, sample.gt.start_s - span)
        hi = max(0.0, min(sample.gt.end_s, sample.duration_s - span))
        start = float(rng.uniform(lo, hi)) if hi > lo else min(lo, hi)
        return AugmentationSpec("cut", cut_start_s=start, cut_span_s=span, seed=seed)
    raise ValueError(f"unknown augmentation kind {kind!r}")


def apply(spec: AugmentationSpec, sample: GroundingSample, video: FrameSequence):
    rec = spec.record()
    if spec.kind == "shift":
        return shift(sample, video, spec.shift_offset_s, record=rec)
    if spec.kind == "scale":
        return scale(sample, video, spec.scale_factor, record=rec)
    window = TimeInterval(spec.cut_start_s, spec.cut_start_s + spec.cut_span_s)
    return cut(sample, video, window, record=rec)
