"""Frame selection for question answering on top of a grounded interval.

A grounded interval shorter than ``min_len_s`` is widened about its midpoint
(and slid back inside the video if needed), then a fixed budget of frames is
sampled at the midpoints of equal sub-spans. The baseline samples the same
budget over the whole video.
"""

from __future__ import annotations

import concurrent.futures as cf
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .intervals import TimeInterval

PROMPT_TEMPLATE = """System:
You are a helpful assistant.
User:
<video>
Question: <question>
Options:
(A) <Option_A>
(B) <Option_B>
(C) <Option_C>
(D) <Option_D>

Please only give the best option.
Best Option:
Assistant:
"""

OPTION_LABELS = "ABCDEFGHIJ"


def render_prompt(question: str, options: Sequence[str]) -> str:
    """Fill the multiple-choice template; the option block grows or shrinks with ``options``."""
    head, tail = PROMPT_TEMPLATE.split("Options:\n", 1)
    tail = tail.split("\n\n", 1)[1]
    block = "".join(f"({OPTION_LABELS[i]}) {o}\n" for i, o in enumerate(options))
    return head.replace("<question>", question) + "Options:\n" + block + "\n" + tail


def extend_interval(interval: TimeInterval, min_len_s: float = 32.0, duration_s: float | None = None) -> TimeInterval:
    if duration_s is None:
        raise TypeError("extend_interval needs the video duration")
    if interval.end_s > duration_s + 1e-9:
        raise ValueError(f"interval {interval.as_list()} exceeds the {duration_s}s video")
    if duration_s <= min_len_s:
        return TimeInterval(0.0, duration_s)
    if interval.length >= min_len_s * (1 - 1e-12):  # a widened interval may lose an ulp in end - start
        return interval
    start = interval.midpoint - min_len_s / 2
    start = min(max(start, 0.0), duration_s - min_len_s)
    return TimeInterval(start, start + min_len_s)


@dataclass(frozen=True)
class FrameSelection:
    interval_used: TimeInterval
    frame_times: tuple[float, ...]

    @property
    def budget(self) -> int:
        return len(self.frame_times)


def uniform_frames(interval: TimeInterval, budget: int = 32) -> FrameSelection:
    if budget < 1:
        raise ValueError(f"frame budget must be >= 1, got {budget}")
    step = interval.length / budget
    times = interval.start_s + (np.arange(budget) + 0.5) * step
    return FrameSelection(interval, tuple(float(t) for t in times))


@dataclass
class AnswerRequest:
    sample_id: str
    question: str
    options: list[str] | None
    frame_times: list[float]
    prompt: str = ""


class Unanswerable(Exception):
    """The sample carries nothing that could answer its question."""


class SignalOracleAnswerer:
    """Answers correctly iff some sampled frame falls inside the planted span.

    ``spans`` maps sample id to its planted span (None when the sample has no
    event, which makes the sample unanswerable).
    """

    def __init__(self, spans: Mapping[str, TimeInterval | None], answers: Mapping[str, str] | None = None):
        self.spans = spans
        self.answers = answers or {}

    def __call__(self, req: AnswerRequest) -> str | None:
        if req.sample_id not in self.spans:
            raise KeyError(f"{req.sample_id}: unknown sample")
        span = self.spans[req.sample_id]
        if span is None:
            raise Unanswerable(req.sample_id)
        seen = any(span.start_s <= t < span.end_s for t in req.frame_times)
        return self.answers.get(req.sample_id, "A") if seen else None


@dataclass
class QASample:
    sample_id: str
    question: str
    duration_s: float
    answer: str = "A"
    options: list[str] | None = None


@dataclass
class QAResult:
    accuracy: dict[str, float | None]
    n_answerable: int
    unanswerable: list[str] = field(default_factory=list)
    quarantined: list[dict] = field(default_factory=list)
    per_sample: dict[str, dict[str, bool]] = field(default_factory=dict)


def _request(s: QASample, sel: FrameSelection) -> AnswerRequest:
    return AnswerRequest(s.sample_id, s.question, s.options, list(sel.frame_times),
                         render_prompt(s.question, s.options or []))


def qa_compare(
    samples: Sequence[QASample],
    grounded: Mapping[str, TimeInterval],
    answerer: Callable[[AnswerRequest], str | None],
    budget: int = 32,
    min_len_s: float = 32.0,
    timeout_s: float = 30.0,
    workers: int = 1,
) -> QAResult:
    """Accuracy with frames taken from the grounded interval vs. spread over the whole video.

    Samples the answerer marks ``Unanswerable`` are listed apart; any other
    answerer failure quarantines the sample.
    """
    jobs = []
    for s in samples:
        full = TimeInterval(0.0, s.duration_s)
        base = uniform_frames(full, budget)
        pred = grounded.get(s.sample_id)
        ground = uniform_frames(extend_interval(pred, min_len_s, s.duration_s), budget) if pred else None
        jobs.append((s, base, ground))

    def run(job):
        s, base, ground = job
        out = {"uniform": answerer(_request(s, base)) == s.answer}
        if ground is not None:
            out["grounded"] = answerer(_request(s, ground)) == s.answer
        return out

    per_sample: dict[str, dict[str, bool]] = {}
    unanswerable, quarantined = [], []
    with cf.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(run, j) for j in jobs]
        for (s, _, _), fut in zip(jobs, futures):
            try:
                per_sample[s.sample_id] = fut.result(timeout=timeout_s)
            except Unanswerable:
                unanswerable.append(s.sample_id)
            except cf.TimeoutError:
                quarantined.append({"sample_id": s.sample_id, "reason": f"timed out after {timeout_s}s"})
            except Exception as exc:
                quarantined.append({"sample_id": s.sample_id, "reason": str(exc)})

    accuracy: dict[str, float | None] = {}
    for cond in ("grounded", "uniform"):
        vals = [r[cond] for r in per_sample.values() if cond in r]
        accuracy[cond] = sum(vals) / len(vals) if vals else None
    return QAResult(accuracy, len(per_sample), unanswerable, quarantined, per_sample)
