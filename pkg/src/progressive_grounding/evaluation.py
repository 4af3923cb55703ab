"""Batch evaluation: recall at IoU thresholds, mIoU and positional robustness.

Recalls are fractions throughout; rendering multiplies by 100.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .intervals import TimeInterval, center_bin, iou, mean_iou, recall_at

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7)
DURATION_BUCKETS = ("short", "medium", "long")
THIRDS = ("early", "middle", "late")


def duration_bucket(duration_s: float, boundaries: tuple[float, float] = (180.0, 900.0)) -> str:
    lo, hi = boundaries
    if duration_s <= lo:
        return "short"
    if duration_s <= hi:
        return "medium"
    return "long"


def bucket_by_duration(samples: Iterable, boundaries: Sequence[float] = (180.0, 900.0)) -> dict[str, list]:
    """Split samples into short / medium / long; a duration equal to a cut point goes below it."""
    if len(boundaries) != 2 or not boundaries[0] < boundaries[1]:
        raise ValueError(f"need two strictly increasing cut points, got {boundaries}")
    out: dict[str, list] = {b: [] for b in DURATION_BUCKETS}
    for s in samples:
        out[duration_bucket(s.duration_s, tuple(boundaries))].append(s)
    return out


def thirds_by_center(samples: Iterable) -> dict[str, list]:
    out: dict[str, list] = {t: [] for t in THIRDS}
    for s in samples:
        out[THIRDS[center_bin(s.center, 3)]].append(s)
    return out


def position_dispersion(recalls: Sequence[float]) -> float:
    """Sample standard deviation (n - 1 divisor), in the units of the input."""
    if len(recalls) < 2:
        raise ValueError("dispersion needs at least 2 values")
    return statistics.stdev(recalls)


def position_gap(recalls: Sequence[float]) -> float | None:
    """Relative spread ``(max - min) / max`` as a fraction; None when every recall is zero."""
    if not recalls:
        raise ValueError("gap of an empty list is undefined")
    hi, lo = max(recalls), min(recalls)
    if hi <= 0:
        return None
    return (hi - lo) / hi


@dataclass
class GapCheck:
    label: str
    computed_pct: float | None
    reported_pct: float
    matches: bool


def check_gap_column(rows: Mapping[str, tuple[Sequence[float], float]], tol_pct: float = 1.0) -> list[GapCheck]:
    """Compare ``position_gap`` with a reported percentage column, row by row.

    Divergent rows are logged, not raised.
    """
    out = []
    for label, (recalls, reported) in rows.items():
        gap = position_gap(recalls)
        pct = None if gap is None else 100.0 * gap
        ok = pct is not None and abs(pct - reported) <= tol_pct
        if not ok:
            log.warning("gap for %s: computed %s%% vs reported %.1f%%", label,
                        "undefined" if pct is None else f"{pct:.1f}", reported)
        out.append(GapCheck(label, pct, reported, ok))
    return out


@dataclass
class SubReport:
    n: int
    r1_at: dict[float, float | None]
    miou: float | None

    @classmethod
    def from_scores(cls, scores: Sequence[float], thresholds: Sequence[float]) -> "SubReport":
        if not scores:
            return cls(0, {t: None for t in thresholds}, None)
        return cls(len(scores), {t: recall_at(scores, t) for t in thresholds}, mean_iou(scores))

    def to_dict(self) -> dict:
        return {"n": self.n, "r1_at": {repr(t): v for t, v in self.r1_at.items()}, "miou": self.miou}

    @classmethod
    def from_dict(cls, d: dict) -> "SubReport":
        return cls(d["n"], {float(k): v for k, v in d["r1_at"].items()}, d["miou"])


@dataclass
class EvalReport:
    n_samples: int
    thresholds: tuple[float, ...]
    r1_at: dict[float, float]
    miou: float
    by_duration: dict[str, SubReport]
    by_center_decile: list[SubReport]
    by_center_third: dict[str, SubReport]
    dispersion: dict[float, float | None]
    gap: dict[float, float | None]
    missing: list[str] = field(default_factory=list)
    unmatched_predictions: int = 0
    duration_boundaries: tuple[float, float] = (180.0, 900.0)
    per_sample_iou: dict[str, float] = field(default_factory=dict)

    @property
    def n_missing(self) -> int:
        return len(self.missing)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "thresholds": list(self.thresholds),
            "r1_at": {repr(t): v for t, v in self.r1_at.items()},
            "miou": self.miou,
            "by_duration": {k: v.to_dict() for k, v in self.by_duration.items()},
            "by_center_decile": [v.to_dict() for v in self.by_center_decile],
            "by_center_third": {k: v.to_dict() for k, v in self.by_center_third.items()},
            "dispersion": {repr(t): v for t, v in self.dispersion.items()},
            "gap": {repr(t): v for t, v in self.gap.items()},
            "missing": list(self.missing),
            "unmatched_predictions": self.unmatched_predictions,
            "duration_boundaries": list(self.duration_boundaries),
            "per_sample_iou": dict(self.per_sample_iou),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            n_samples=d["n_samples"],
            thresholds=tuple(d["thresholds"]),
            r1_at={float(k): v for k, v in d["r1_at"].items()},
            miou=d["miou"],
            by_duration={k: SubReport.from_dict(v) for k, v in d["by_duration"].items()},
            by_center_decile=[SubReport.from_dict(v) for v in d["by_center_decile"]],
            by_center_third={k: SubReport.from_dict(v) for k, v in d["by_center_third"].items()},
            dispersion={float(k): v for k, v in d["dispersion"].items()},
            gap={float(k): v for k, v in d["gap"].items()},
            missing=list(d["missing"]),
            unmatched_predictions=d["unmatched_predictions"],
            duration_boundaries=tuple(d["duration_boundaries"]),
            per_sample_iou=dict(d["per_sample_iou"]),
        )

    def render(self) -> str:
        return render_report(self)


def evaluate(
    predictions: Mapping[str, TimeInterval],
    gts: Sequence,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    duration_boundaries: tuple[float, float] = (180.0, 900.0),
) -> EvalReport:
    """Score predictions against ground-truth samples.

    A sample without a prediction scores IoU 0 and is listed in ``missing``.
    """
    if not gts:
        raise ValueError("nothing to evaluate")
    thresholds = tuple(sorted(float(t) for t in thresholds))
    ids = [g.sample_id for g in gts]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate sample ids: {dupes[:5]}")

    scores: dict[str, float] = {}
    missing = []
    for g in gts:
        pred = predictions.get(g.sample_id)
        if pred is None:
            missing.append(g.sample_id)
            scores[g.sample_id] = 0.0
        else:
            scores[g.sample_id] = iou(pred, g.gt)
    if missing:
        log.warning("%d samples have no prediction and score 0", len(missing))

    def sub(group) -> SubReport:
        return SubReport.from_scores([scores[g.sample_id] for g in group], thresholds)

    overall = [scores[i] for i in ids]
    deciles: list[list] = [[] for _ in range(10)]
    for g in gts:
        deciles[center_bin(g.center, 10)].append(g)
    thirds = {k: sub(v) for k, v in thirds_by_center(gts).items()}
    decile_reports = [sub(d) for d in deciles]

    dispersion: dict[float, float | None] = {}
    gap: dict[float, float | None] = {}
    for t in thresholds:
        third_vals = [r.r1_at[t] for r in thirds.values() if r.n]
        dispersion[t] = position_dispersion(third_vals) if len(third_vals) >= 2 else None
        decile_vals = [r.r1_at[t] for r in decile_reports if r.n]
        gap[t] = position_gap(decile_vals) if decile_vals else None

    return EvalReport(
        n_samples=len(gts),
        thresholds=thresholds,
        r1_at={t: recall_at(overall, t) for t in thresholds},
        miou=mean_iou(overall),
        by_duration={k: sub(v) for k, v in bucket_by_duration(gts, duration_boundaries).items()},
        by_center_decile=decile_reports,
        by_center_third=thirds,
        dispersion=dispersion,
        gap=gap,
        missing=missing,
        unmatched_predictions=len(set(predictions) - set(ids)),
        duration_boundaries=tuple(duration_boundaries),
        per_sample_iou=scores,
    )


def _pct(v: float | None, digits: int = 1) -> str:
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{100 * v:.{digits}f}"


def render_report(report: EvalReport) -> str:
    ts = report.thresholds
    lines = [f"samples: {report.n_samples}  missing predictions: {report.n_missing}", ""]
    head = " ".join(f"R1@{t:<4}" for t in ts)
    lines.append(f"{'subset':<12} {'n':>5}  {head}  mIoU")
    rows = [("all", report.n_samples, report.r1_at, report.miou)]
    lo, hi = report.duration_boundaries
    for name, r in report.by_duration.items():
        rows.append((name, r.n, r.r1_at, r.miou))
    for name, r in report.by_center_third.items():
        rows.append((name, r.n, r.r1_at, r.miou))
    for label, n, r1, m in rows:
        cells = " ".join(f"{_pct(r1[t]):>7}" for t in ts)
        lines.append(f"{label:<12} {n:>5}  {cells}  {_pct(m):>5}")
    lines.append(f"(short <= {lo:g}s < medium <= {hi:g}s < long)")
    lines.append("")
    lines.append("query center  " + " ".join(f"{k / 10:.1f}-{(k + 1) / 10:.1f}" for k in range(10)) + "  gap")
    for t in ts:
        cells = " ".join(f"{_pct(r.r1_at[t], 1):>7}" for r in report.by_center_decile)
        lines.append(f"R1@{t:<10} {cells}  {_pct(report.gap[t])}%")
    lines.append("")
    lines.append("std dev over early/middle/late (points): "
                 + ", ".join(f"R1@{t}={_pct(report.dispersion[t], 2)}" for t in ts))
    return "\n".join(lines) + "\n"


@dataclass
class RobustnessRow:
    label: str
    recalls: list[float]
    reported_std: float | None = None
    reported_gap_pct: float | None = None


def robustness_table(rows: Sequence[RobustnessRow], tol: float = 0.1, gap_tol_pct: float = 1.0) -> list[dict]:
    """Std dev and gap columns for per-position recall rows (percentage or fraction units).

    A row with more than 3 values is treated as deciles and only gets a gap; the
    std dev column is computed for every row with at least 2 values.
    """
    out = []
    for row in rows:
        std = position_dispersion(row.recalls) if len(row.recalls) >= 2 else None
        gap = position_gap(row.recalls)
        entry = {"label": row.label, "recalls": list(row.recalls), "std": std,
                 "gap_pct": None if gap is None else 100.0 * gap}
        if row.reported_std is not None:
            entry["reported_std"] = row.reported_std
            entry["std_matches"] = std is not None and abs(std - row.reported_std) <= tol
            if not entry["std_matches"]:
                log.warning("std dev for %s: computed %s vs reported %s", row.label, std, row.reported_std)
        if row.reported_gap_pct is not None:
            entry["reported_gap_pct"] = row.reported_gap_pct
            entry["gap_matches"] = (entry["gap_pct"] is not None
                                    and abs(entry["gap_pct"] - row.reported_gap_pct) <= gap_tol_pct)
            if not entry["gap_matches"]:
                log.warning("gap for %s: computed %s vs reported %s%% (known divergence)", row.label,
                            "undefined" if entry["gap_pct"] is None else f"{entry['gap_pct']:.1f}%",
                            row.reported_gap_pct)
        out.append(entry)
    return out


def render_robustness(table: Sequence[dict]) -> str:
    lines = [f"{'row':<24} {'std':>7} {'rep':>6} {'gap%':>7} {'rep%':>6}"]
    for e in table:
        std = "-" if e["std"] is None else f"{e['std']:.2f}"
        gap = "-" if e["gap_pct"] is None else f"{e['gap_pct']:.1f}"
        rstd = "" if "reported_std" not in e else f"{e['reported_std']:g}"
        rgap = "" if "reported_gap_pct" not in e else f"{e['reported_gap_pct']:g}"
        flag = ""
        if e.get("std_matches") is False or e.get("gap_matches") is False:
            flag = "  <- differs from reported"
        lines.append(f"{e['label']:<24} {std:>7} {rstd:>6} {gap:>7} {rgap:>6}{flag}")
    return "\n".join(lines) + "\n"
