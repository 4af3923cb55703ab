"""Grounding samples and their line-delimited JSON manifests.

A manifest is a JSONL file. Its first line may be a header
``{"__meta__": {...}}`` carrying the command and configuration that produced
it; readers skip it. Every other line is one record.

Dataset record::

    {"sample_id", "video_id", "duration_s", "fps", "feature_path", "query",
     "options"?, "gt": [start_s, end_s], "task_type", "video_category",
     "time_origin_s"?, "frame_range"?, "signal"?, "answer"?, "augmentations"?}

``feature_path`` is relative to the manifest's directory and names a ``.npy``
(binary) or ``.txt`` / ``.csv`` (whitespace or comma separated text) matrix with
one row per frame. ``frame_range`` selects rows ``[a, b)``; frame ``k`` of the
selection sits at ``time_origin_s + k / fps``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np

from .cache import FrameSequence
from .intervals import TimeInterval, query_center

META_KEY = "__meta__"


@dataclass(frozen=True)
class GroundingSample:
    sample_id: str
    video_id: str
    duration_s: float
    query: str
    gt: TimeInterval
    task_type: str = ""
    video_category: str = ""
    options: list[str] | None = None
    fps: float = 1.0
    feature_path: str | None = None
    time_origin_s: float = 0.0
    frame_range: tuple[int, int] | None = None
    signal: TimeInterval | None = None
    answer: str | None = None
    augmentations: tuple[dict, ...] = ()

    def __post_init__(self) -> None:
        if not self.duration_s > 0:
            raise ValueError(f"{self.sample_id}: duration must be positive")
        if self.gt.end_s > self.duration_s + 1e-9:
            raise ValueError(
                f"{self.sample_id}: gt {self.gt.as_list()} exceeds duration {self.duration_s}"
            )

    @property
    def center(self) -> float:
        return query_center(self.gt, self.duration_s)

    def evolve(self, **changes) -> "GroundingSample":
        return replace(self, **changes)

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "sample_id": self.sample_id,
            "video_id": self.video_id,
            "duration_s": self.duration_s,
            "fps": self.fps,
            "feature_path": self.feature_path,
            "query": self.query,
        }
        if self.options is not None:
            rec["options"] = list(self.options)
        rec["gt"] = self.gt.as_list()
        rec["task_type"] = self.task_type
        rec["video_category"] = self.video_category
        if self.time_origin_s:
            rec["time_origin_s"] = self.time_origin_s
        if self.frame_range is not None:
            rec["frame_range"] = list(self.frame_range)
        if self.signal is not None:
            rec["signal"] = self.signal.as_list()
        if self.answer is not None:
            rec["answer"] = self.answer
        if self.augmentations:
            rec["augmentations"] = [dict(a) for a in self.augmentations]
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "GroundingSample":
        fr = rec.get("frame_range")
        sig = rec.get("signal")
        return cls(
            sample_id=str(rec.get("sample_id", rec["video_id"])),
            video_id=str(rec["video_id"]),
            duration_s=float(rec["duration_s"]),
            query=rec["query"],
            gt=TimeInterval.from_pair(rec["gt"]),
            task_type=rec.get("task_type", ""),
            video_category=rec.get("video_category", ""),
            options=rec.get("options"),
            fps=float(rec.get("fps", 1.0)),
            feature_path=rec.get("feature_path"),
            time_origin_s=float(rec.get("time_origin_s", 0.0)),
            frame_range=tuple(fr) if fr is not None else None,
            signal=TimeInterval.from_pair(sig) if sig is not None else None,
            answer=rec.get("answer"),
            augmentations=tuple(rec.get("augmentations", ())),
        )


def dumps(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path: str | os.PathLike, records: Iterable[dict], meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(dumps({META_KEY: meta}) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")


def read_jsonl(path: str | os.PathLike) -> tuple[dict | None, list[dict]]:
    """Return ``(meta, records)``; ``meta`` is None when there is no header."""
    meta = None
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if META_KEY in rec:
                meta = rec[META_KEY]
                continue
            records.append(rec)
    return meta, records


def read_samples(path: str | os.PathLike) -> list[GroundingSample]:
    return [GroundingSample.from_record(r) for r in read_jsonl(path)[1]]


def load_features(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".npy":
        arr = np.load(path, allow_pickle=False)
    elif ext == ".txt":
        arr = np.loadtxt(path, ndmin=2)
    elif ext == ".csv":
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    else:
        raise ValueError(f"unsupported feature file extension {ext!r}")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{path}: feature matrix must be 2-D, got shape {arr.shape}")
    return arr


def save_features(path: str | os.PathLike, frames: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ext = path.suffix.lower()
    if ext == ".npy":
        with open(path, "wb") as fh:
            np.save(fh, np.asarray(frames, dtype=np.float64), allow_pickle=False)
    elif ext in (".txt", ".csv"):
        np.savetxt(path, frames, delimiter="," if ext == ".csv" else " ", fmt="%.17g")
    else:
        raise ValueError(f"unsupported feature file extension {ext!r}")


def load_video(sample: GroundingSample, base_dir: str | os.PathLike = ".", group_size: int = 4) -> FrameSequence:
    if sample.feature_path is None:
        raise FileNotFoundError(f"{sample.sample_id}: no feature file")
    rows = load_features(Path(base_dir) / sample.feature_path)
    if sample.frame_range is not None:
        a, b = sample.frame_range
        rows = rows[a:b]
    times = sample.time_origin_s + np.arange(rows.shape[0]) / sample.fps
    return FrameSequence(
        video_id=sample.video_id,
        frames=rows,
        fps=sample.fps,
        frame_times=times,
        group_size=group_size,
        duration_s=sample.duration_s,
    )


def relocate(feature_path: str | None, src_dir: str | os.PathLike, dst_dir: str | os.PathLike) -> str | None:
    """Rewrite a manifest-relative path for a manifest written elsewhere."""
    if feature_path is None or os.path.isabs(feature_path):
        return feature_path
    target = os.path.normpath(os.path.join(src_dir, feature_path))
    return Path(os.path.relpath(target, dst_dir)).as_posix()
