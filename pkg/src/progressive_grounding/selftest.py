"""Built-in property checks run by ``progressive-grounding selftest``.

Each check is deterministic for a given seed, so two machines running the same
seed print the same summary. Library functions are looked up through their
modules at call time, which lets a test swap in a broken implementation and
watch the matching check fail by name.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import augmentation as aug
from . import cache as kv
from . import curation, evaluation, grounding, qa_bridge, synthetic
from .intervals import TimeInterval, iou, recall_at

# Early/middle/late R1@0.5 recalls with their reported std dev.
REFERENCE_THIRDS = {
    "Qwen-2.5-VL": ([20.0, 13.4, 4.1], 8.0),
    "Keye-1.5-VL": ([50.0, 33.3, 31.1], 10.4),
    "UniTime-Full": ([50.9, 28.1, 44.0], 11.6),
    "TimeScope-7B": ([39.3, 44.8, 46.0], 3.5),
}

# R@0.3 recalls per query-center decile with the reported best-vs-worst gap (%).
REFERENCE_DECILES = {
    "Qwen2.5VL R@0.3": ([0.417, 0.368, 0.615, 0.222, 0.250, 0.158, 0.278, 0.235, 0.133, 0.154], 78.0),
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def unit_cell_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """IoU of integer-endpoint intervals by counting unit cells."""
    cells_a = set(range(a[0], a[1]))
    cells_b = set(range(b[0], b[1]))
    return len(cells_a & cells_b) / len(cells_a | cells_b)


def _random_pair(rng: np.random.Generator, hi: int = 60) -> tuple[tuple[int, int], tuple[int, int]]:
    out = []
    for _ in range(2):
        s = int(rng.integers(0, hi))
        out.append((s, s + int(rng.integers(1, hi))))
    return out[0], out[1]


def check_iou_oracle(seed: int, quick: bool) -> str:
    rng = np.random.default_rng(seed)
    n = 1000 if quick else 10_000
    for _ in range(n):
        a, b = _random_pair(rng)
        got = iou(TimeInterval(*a), TimeInterval(*b))
        want = unit_cell_iou(a, b)
        if got != want:
            raise AssertionError(f"iou{a}{b} = {got}, cell count gives {want}")
    return f"{n} pairs"


def _random_video(rng: np.random.Generator) -> tuple[kv.FrameSequence, grounding.Query]:
    n = int(rng.integers(5, 120))
    dim = int(rng.integers(4, 17))
    frames = rng.standard_normal((n, dim))
    fps = float(rng.choice([0.5, 1.0, 2.0]))
    video = kv.FrameSequence("v", frames, fps=fps, group_size=int(rng.integers(1, 6)))
    return video, grounding.Query.from_text(f"query {int(rng.integers(1 << 30))}", dim)


def check_degenerate_equivalence(seed: int, quick: bool) -> str:
    """Factor-1 pooling with an unbounded margin must reduce to single-stage grounding."""
    rng = np.random.default_rng(seed)
    n = 40 if quick else 200
    scorer = grounding.InnerProductScorer()
    cfg = grounding.GroundingConfig(pool_factor=1, margin=None, max_frames=None)
    for i in range(n):
        video, q = _random_video(rng)
        fine = kv.prefill(kv.build_sequence(video, q.embedding), cfg.prefill)
        coarse = kv.pool_cache(fine, 1)
        if coarse.n_visual != fine.n_visual:
            raise AssertionError(f"pair {i}: factor-1 pooling gives {coarse.n_visual} entries for {fine.n_visual}")
        for layer, (ck, fk) in enumerate(zip(coarse.keys, fine.keys)):
            if not np.array_equal(ck[coarse.visual_mask], fk[fine.visual_mask]):
                raise AssertionError(f"pair {i}: factor-1 pooled keys differ from fine keys at layer {layer}")
        prog = grounding.ground_progressive(video, q, scorer, cfg)
        single = grounding.ground_single_stage(video, q, scorer, cfg)
        if prog.interval != single.interval:
            raise AssertionError(f"pair {i}: {prog.interval.as_list()} vs {single.interval.as_list()}")
    return f"{n} pairs"


def _distractor_spec() -> synthetic.EventSpec:
    return synthetic.EventSpec(event_len=(4, 12), noise=0.05, n_distractors=2, distractor_amp=0.6)


def check_containment(seed: int, quick: bool) -> str:
    n = 100 if quick else 1000
    scorer = grounding.InnerProductScorer()
    cfg = grounding.GroundingConfig()
    for s in synthetic.make_corpus(n, _distractor_spec(), seed):
        res = grounding.ground_progressive(s.video, s.query, scorer, cfg)
        if not res.window.interval.contains(res.interval):
            raise AssertionError(f"{s.sample_id}: {res.interval.as_list()} outside {res.window.interval.as_list()}")
    return f"{n} samples"


def check_noiseless_recovery(seed: int, quick: bool) -> str:
    n = 50 if quick else 300
    scorer = grounding.InnerProductScorer()
    cfg = grounding.GroundingConfig()
    scores = [iou(grounding.ground_progressive(s.video, s.query, scorer, cfg).interval, s.gt)
              for s in synthetic.make_corpus(n, synthetic.EventSpec(), seed)]
    r = recall_at(scores, 0.7)
    if r != 1.0:
        raise AssertionError(f"R1@0.7 = {r} on the noiseless corpus")
    return f"R1@0.7 = 1.0 over {n} samples"


def check_token_budget(seed: int, quick: bool) -> str:
    rng = np.random.default_rng(seed)
    video = kv.FrameSequence("budget", rng.standard_normal((300, 8)))
    q = grounding.Query.from_text("budget", 8)
    fine = kv.prefill(kv.build_sequence(video, q.embedding))
    coarse = kv.pool_cache(fine, 4)
    restricted = kv.select_window(fine, TimeInterval(100.0, 129.0))
    b = kv.token_budget(fine, coarse, restricted)
    got = (b.stage1, b.stage2, b.single_stage)
    if got != (75, 30, 300):
        raise AssertionError(f"stage1/stage2/single = {got}, expected (75, 30, 300)")
    if grounding.progressive_budget(300, 4, 30) != b.progressive:
        raise AssertionError("progressive_budget disagrees with the cache counts")
    return "75 + 30 vs 300"


def _toy_pair(rng: np.random.Generator):
    from .manifest import GroundingSample

    n = int(rng.integers(40, 200))
    a = int(rng.integers(0, n - 5))
    gt = TimeInterval(float(a), float(rng.integers(a + 1, min(n, a + 40) + 1)))
    video = kv.FrameSequence("aug", rng.standard_normal((n, 4)))
    sample = GroundingSample("aug", "aug", video.duration_s, "q", gt, "t", "c")
    return sample, video


def check_augmentation(seed: int, quick: bool) -> str:
    rng = np.random.default_rng(seed)
    n = 1000 if quick else 10_000
    for _ in range(200 if quick else 1000):
        sample, video = _toy_pair(rng)
        a, b = float(rng.uniform(4, 100)), float(rng.uniform(4, 100))
        twice, _ = aug.shift(*aug.shift(sample, video, a), b)
        once, _ = aug.shift(sample, video, a + b)
        if abs(twice.gt.start_s - once.gt.start_s) > 1e-9 or abs(twice.gt.end_s - once.gt.end_s) > 1e-9:
            raise AssertionError("shift(a) then shift(b) differs from shift(a + b)")
        k = float(rng.uniform(0.5, 2.0))
        back, back_video = aug.scale(*aug.scale(sample, video, k), 1.0 / k)
        if max(abs(back.gt.start_s - sample.gt.start_s), abs(back.gt.end_s - sample.gt.end_s)) > 1e-9:
            raise AssertionError(f"scale({k}) then scale({1 / k}) moved the target")
        if np.max(np.abs(back_video.frame_times - video.frame_times)) > 1e-9:
            raise AssertionError("scale round trip moved frame times")
        pred = TimeInterval(float(rng.uniform(0, 50)), float(rng.uniform(51, 120)))
        before = iou(pred, sample.gt)
        after = iou(pred.scaled(k).shifted(a), sample.gt.scaled(k).shifted(a))
        if abs(before - after) > 1e-9:
            raise AssertionError(f"IoU changed under joint shift/scale: {before} vs {after}")
    sample, video = _toy_pair(np.random.default_rng(seed + 1))
    long_sample = sample.evolve(duration_s=max(sample.duration_s, 40.0))
    for _ in range(n):
        s = aug.draw_spec("shift", sample, rng)
        if not 4.0 <= s.shift_offset_s <= 1004.0:
            raise AssertionError(f"shift offset {s.shift_offset_s} out of range")
        c = aug.draw_spec("cut", long_sample, rng)
        if not 10.0 <= c.cut_span_s <= 20.0:
            raise AssertionError(f"cut span {c.cut_span_s} out of range")
    return f"{n} draws per range"


def check_consensus(seed: int, quick: bool) -> str:
    vote = curation.ExpertVote
    res = curation.expert_consensus([vote("a", TimeInterval(10, 20)), vote("b", TimeInterval(12, 22))])
    if not res.retained or res.interval != TimeInterval(11, 21):
        raise AssertionError(f"([10,20],[12,22]) gave {res}")
    if curation.expert_consensus([vote("a", TimeInterval(0, 5)), vote("b", TimeInterval(10, 15))]).retained:
        raise AssertionError("disjoint votes were retained")
    rng = np.random.default_rng(seed)
    votes = [vote(f"e{i}", TimeInterval(10 + d, 20 + d)) for i, d in enumerate([0.0, 0.5, 1.0, 1.5])]
    first = curation.expert_consensus(votes)
    for _ in range(100):
        order = rng.permutation(len(votes))
        if curation.expert_consensus([votes[i] for i in order]) != first:
            raise AssertionError("consensus depends on vote order")
    return "fixtures and 100 shuffles"


def check_qa_bridge(seed: int, quick: bool) -> str:
    ext = qa_bridge.extend_interval
    if ext(TimeInterval(100, 110), 32, 1000) != TimeInterval(89, 121):
        raise AssertionError(f"[100,110] -> {ext(TimeInterval(100, 110), 32, 1000)}")
    if ext(TimeInterval(5, 10), 32, 1000) != TimeInterval(0, 32):
        raise AssertionError(f"[5,10] -> {ext(TimeInterval(5, 10), 32, 1000)}")
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        dur = float(rng.uniform(1, 2000))
        a = float(rng.uniform(0, dur * 0.99))
        iv = TimeInterval(a, float(rng.uniform(a + 1e-3, dur)) if a + 1e-3 < dur else dur)
        once = ext(iv, 32, dur)
        if ext(once, 32, dur) != once:
            raise AssertionError(f"extend_interval is not idempotent on {iv.as_list()} in {dur}s")
    return "examples and 1000 idempotence draws"


def check_position_statistics(seed: int, quick: bool) -> str:
    for label, (recalls, reported) in REFERENCE_THIRDS.items():
        std = evaluation.position_dispersion(recalls)
        if abs(std - reported) > 0.1:
            raise AssertionError(f"{label}: std dev {std:.3f} vs {reported}")
    for label, (recalls, reported) in REFERENCE_DECILES.items():
        gap = 100.0 * evaluation.position_gap(recalls)
        if abs(gap - reported) > 1.0:
            raise AssertionError(f"{label}: gap {gap:.2f}% vs {reported}%")
    return "std dev and gap columns"


CHECKS: dict[str, Callable[[int, bool], str]] = {
    "iou_oracle": check_iou_oracle,
    "degenerate_equivalence": check_degenerate_equivalence,
    "containment": check_containment,
    "noiseless_recovery": check_noiseless_recovery,
    "token_budget": check_token_budget,
    "augmentation": check_augmentation,
    "consensus": check_consensus,
    "qa_bridge": check_qa_bridge,
    "position_statistics": check_position_statistics,
}


def run_checks(seed: int = 0, quick: bool = False) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS.items():
        try:
            detail = fn(seed, quick)
            results.append(CheckResult(name, True, detail))
        except Exception as exc:  # a crash is a failure of that check, not of the run
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
    return results

