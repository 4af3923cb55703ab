"""Closed time intervals and the grounding metrics computed over them.

All functions here are pure; intervals are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True, order=True)
class TimeInterval:
    """A closed span ``[start_s, end_s]`` in seconds with positive length."""

    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        s, e = float(self.start_s), float(self.end_s)
        if math.isnan(s) or math.isnan(e):
            raise ValueError("interval endpoints must not be NaN")
        if s < 0:
            raise ValueError(f"interval start must be >= 0, got {s}")
        if not e > s:
            raise ValueError(f"interval must have positive length, got [{s}, {e}]")
        object.__setattr__(self, "start_s", s)
        object.__setattr__(self, "end_s", e)

    @property
    def length(self) -> float:
        return self.end_s - self.start_s

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start_s + self.end_s)

    def shifted(self, offset: float) -> "TimeInterval":
        return TimeInterval(self.start_s + offset, self.end_s + offset)

    def scaled(self, factor: float) -> "TimeInterval":
        return TimeInterval(self.start_s * factor, self.end_s * factor)

    def contains(self, other: "TimeInterval") -> bool:
        return self.start_s <= other.start_s and other.end_s <= self.end_s

    def intersection_length(self, other: "TimeInterval") -> float:
        return max(0.0, min(self.end_s, other.end_s) - max(self.start_s, other.start_s))

    def intersection(self, other: "TimeInterval") -> "TimeInterval | None":
        s = max(self.start_s, other.start_s)
        e = min(self.end_s, other.end_s)
        return TimeInterval(s, e) if e > s else None

    def as_list(self) -> list[float]:
        return [self.start_s, self.end_s]

    @classmethod
    def from_pair(cls, pair: Sequence[float]) -> "TimeInterval":
        if len(pair) != 2:
            raise ValueError(f"expected [start, end], got {pair!r}")
        return cls(float(pair[0]), float(pair[1]))


def iou(a: TimeInterval, b: TimeInterval) -> float:
    """Intersection over union of two intervals, in ``[0, 1]``."""
    inter = a.intersection_length(b)
    if inter == 0.0:
        return 0.0
    if a == b:
        return 1.0
    union = a.length + b.length - inter
    return min(1.0, inter / union)


def mean_iou(scores: Iterable[float]) -> float:
    values = list(scores)
    if not values:
        raise ValueError("mean IoU of an empty list is undefined")
    return math.fsum(values) / len(values)


def recall_at(scores: Iterable[float], tau: float) -> float:
    """Fraction of IoU scores that reach ``tau``."""
    values = list(scores)
    if not values:
        raise ValueError("recall of an empty list is undefined")
    if not 0 < tau <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {tau}")
    return sum(1 for v in values if v >= tau) / len(values)


def query_center(gt: TimeInterval, video_duration: float) -> float:
    """Normalized position of the target's midpoint within the video."""
    if not video_duration > 0:
        raise ValueError(f"video duration must be positive, got {video_duration}")
    if gt.end_s > video_duration:
        raise ValueError(f"interval {gt.as_list()} lies outside a {video_duration}s video")
    return gt.midpoint / video_duration


def center_bin(center: float, bins: int) -> int:
    """Index of the half-open bin ``[k/bins, (k+1)/bins)`` holding ``center``; last bin closed."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    if not 0.0 <= center <= 1.0:
        raise ValueError(f"center must be in [0, 1], got {center}")
    return min(int(math.floor(center * bins)), bins - 1)
