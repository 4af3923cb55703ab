"""Run configuration shared by every command and embedded in every output."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .cache import PrefillParams
from .grounding import GroundingConfig


@dataclass
class RunConfig:
    pool_factor: int = 4
    theta: float = 0.5
    delta: float = 0.2
    margin: int | None = 1  # None: unbounded
    fps: float = 1.0
    max_frames_train: int = 300
    max_frames_eval: int = 800
    thresholds: tuple[float, ...] = (0.3, 0.5, 0.7)
    duration_buckets: tuple[float, float] = (180.0, 900.0)
    seed: int = 0
    mode: str = "progressive"
    scorer: str = "synthetic"
    group_size: int = 4
    prefill_layers: int = 2
    with_options: bool = False
    workers: int = 1  # execution detail; never serialized

    def __post_init__(self) -> None:
        self.thresholds = tuple(float(t) for t in self.thresholds)
        self.duration_buckets = tuple(float(b) for b in self.duration_buckets)
        if self.mode not in ("progressive", "single"):
            raise ValueError(f"mode must be 'progressive' or 'single', got {self.mode!r}")
        if len(self.duration_buckets) != 2 or not self.duration_buckets[0] < self.duration_buckets[1]:
            raise ValueError("duration buckets need two increasing cut points")
        if not self.thresholds or not all(0 < t <= 1 for t in self.thresholds):
            raise ValueError("thresholds must lie in (0, 1]")

    def grounding(self) -> GroundingConfig:
        return GroundingConfig(
            pool_factor=self.pool_factor,
            theta=self.theta,
            delta=self.delta,
            margin=self.margin,
            max_frames=self.max_frames_eval,
            with_options=self.with_options,
            prefill=PrefillParams(layers=self.prefill_layers, seed=self.seed),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("workers")
        d["thresholds"] = list(self.thresholds)
        d["duration_buckets"] = list(self.duration_buckets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        """Read a config from a JSON file or from the header of any output file."""
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        first = text.split("\n", 1)[0].removeprefix("# ")
        for candidate in (first, text):
            try:
                doc = json.loads(candidate)
            except json.JSONDecodeError:
                continue
            if "__meta__" in doc:
                doc = doc["__meta__"]
            if "config" in doc:
                doc = doc["config"]
            return cls.from_dict(doc)
        raise ValueError(f"{path}: no configuration found")
