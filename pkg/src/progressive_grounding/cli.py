"""Command-line entry points.

    progressive-grounding generate videos|clips --n N --out DIR
    progressive-grounding curate CLIPS.jsonl --out DIR
    progressive-grounding augment MANIFEST.jsonl --out OUT.jsonl --kinds shift,cut
    progressive-grounding ground MANIFEST.jsonl --out PREDS.jsonl [--mode single]
    progressive-grounding eval PREDS.jsonl MANIFEST.jsonl --out-dir DIR
    progressive-grounding eval --recall-table ROWS.jsonl --out-dir DIR
    progressive-grounding selftest
    progressive-grounding replay OUTPUT_FILE --out NEW_OUTPUT [--check]

Every output starts with a ``__meta__`` header holding the command, its
inputs and options, and the full run configuration. ``replay`` re-runs a
command from that header.

Prediction record::

    {"sample_id", "window": [s, e], "interval": [s, e], "mode",
     "trace": {"stage1_tokens", "stage2_tokens"}}

Evaluation writes ``report.json`` (``{"__meta__", "report"}``, see
``EvalReport.to_dict``) and ``report.txt`` (a header line then the tables).
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import json
import logging
import sys
import zlib
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from . import augmentation as aug
from .config import RunConfig
from .curation import ClipRecord, CurationConfig, run_pipeline
from .evaluation import RobustnessRow, evaluate, render_robustness, robustness_table
from .grounding import Query, get_scorer, ground_progressive, ground_single_stage
from .intervals import TimeInterval
from .manifest import (
    GroundingSample, dumps, load_features, load_video, read_jsonl, relocate,
    save_features, write_jsonl,
)
from .synthetic import ClipSpec, EventSpec, make_clip_corpus, make_corpus

log = logging.getLogger("progressive_grounding")


class CommandError(Exception):
    pass


def _meta(command: str, inputs: dict, options: dict, config: RunConfig) -> dict:
    return {"command": command, "version": __version__, "inputs": inputs,
            "options": options, "config": config.to_dict()}


def _sample_seed(seed: int, key: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(key.encode("utf-8"))])


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with cf.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- generate ------------------------------------------------------------------

def run_generate(inputs: dict, options: dict, config: RunConfig, out: Path) -> int:
    kind = options["kind"]
    n = int(options["n"])
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta("generate", inputs, options, config)
    if kind == "videos":
        spec = EventSpec(
            n_frames=int(options.get("frames", 300)), fps=config.fps, dim=int(options.get("dim", 32)),
            group_size=config.group_size, event_len=tuple(options.get("event_len", (8, 40))),
            noise=float(options.get("noise", 0.0)), n_distractors=int(options.get("distractors", 0)),
            distractor_amp=float(options.get("distractor_amp", 0.6)),
        )
        records = []
        for s in make_corpus(n, spec, config.seed):
            rel = f"features/{s.sample_id}.npy"
            save_features(out / rel, s.video.frames)
            gs = GroundingSample(
                sample_id=s.sample_id, video_id=s.sample_id, duration_s=s.video.duration_s,
                query=s.query.text, gt=s.gt, task_type=s.task_type, video_category=s.video_category,
                fps=s.video.fps, feature_path=rel, signal=s.gt,
            )
            records.append(gs.to_record())
        write_jsonl(out / "manifest.jsonl", records, meta)
    elif kind == "clips":
        spec = ClipSpec(duration_range=tuple(options.get("duration_range", (50, 150))), fps=config.fps,
                        dim=int(options.get("dim", 64)))
        records = []
        for clip, frames in make_clip_corpus(n, spec, config.seed):
            rel = f"features/{clip.clip_id}.npy"
            save_features(out / rel, frames)
            rec = clip.to_record()
            rec["feature_path"] = rel
            records.append(rec)
        write_jsonl(out / "clips.jsonl", records, meta)
    else:
        raise CommandError(f"unknown corpus kind {kind!r}")
    return 0


# -- curate --------------------------------------------------------------------

def run_curate(inputs: dict, options: dict, config: RunConfig, out: Path) -> int:
    src = Path(inputs["clips"])
    _, recs = read_jsonl(src)
    clips = [ClipRecord.from_record(r) for r in recs]
    cc = CurationConfig(
        min_iou=float(options.get("min_iou", 0.5)),
        target_s=float(options.get("target_s", 500.0)),
        segment_s=float(options.get("segment_s", 30.0)),
        balance_dimensions=tuple(options.get("balance_dims", ())),
        balance_cap=options.get("balance_cap"),
        duration_boundaries=config.duration_buckets,
        seed=config.seed,
        hook_timeout_s=float(options.get("hook_timeout_s", 30.0)),
        workers=config.workers,
    )
    result = run_pipeline(clips, cc)
    out.mkdir(parents=True, exist_ok=True)
    kept_videos = {s.video_id for s in result.samples}
    feature_of: dict[str, str] = {}
    for v in result.videos:
        if v.video_id not in kept_videos:
            continue
        parts = []
        for p in v.placements:
            if p.clip.feature_path is None:
                raise CommandError(f"clip {p.clip.clip_id} has no features")
            parts.append(load_features(src.parent / p.clip.feature_path))
        rel = f"features/{v.video_id}.npy"
        save_features(out / rel, np.vstack(parts))
        feature_of[v.video_id] = rel
    samples = [s.evolve(feature_path=feature_of[s.video_id]) for s in result.samples]
    meta = _meta("curate", inputs, options, config)
    write_jsonl(out / "manifest.jsonl", [s.to_record() for s in samples], meta)
    with open(out / "report.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"__meta__": meta, "report": result.report.to_dict()}, indent=1) + "\n")
    summary = result.report.summary()
    log.info("curate: %d clips -> %d kept, %d dropped, %d quarantined",
             summary["total"], summary["kept"], summary["dropped"], summary["quarantined"])
    return 0


# -- augment -------------------------------------------------------------------

def run_augment(inputs: dict, options: dict, config: RunConfig, out: Path) -> int:
    src = Path(inputs["manifest"])
    _, recs = read_jsonl(src)
    samples = [GroundingSample.from_record(r) for r in recs]
    kinds = list(options["kinds"])
    fixed = {
        "shift": options.get("shift_offset"),
        "cut": options.get("cut_span"),
        "scale": options.get("scale_factor"),
    }
    scale_range = tuple(options.get("scale_range", aug.SCALE_RANGE))

    def one(sample: GroundingSample):
        rng = np.random.default_rng(_sample_seed(config.seed, sample.sample_id))
        video = load_video(sample, src.parent, config.group_size)
        try:
            for kind in kinds:
                spec = aug.draw_spec(kind, sample, rng, seed=config.seed, scale_range=scale_range,
                                     value=fixed[kind])
                sample, video = aug.apply(spec, sample, video)
        except aug.Discarded as exc:
            return None, str(exc)
        return sample, None

    results = _pmap(one, samples, config.workers)
    kept, discarded = [], []
    for original, (s, why) in zip(samples, results):
        if s is None:
            discarded.append({"sample_id": original.sample_id, "reason": why})
        else:
            kept.append(s.evolve(feature_path=relocate(s.feature_path, src.parent, out.parent)))
    meta = _meta("augment", inputs, options, config)
    meta["discarded"] = discarded
    write_jsonl(out, [s.to_record() for s in kept], meta)
    log.info("augment: %d in, %d out, %d discarded", len(samples), len(kept), len(discarded))
    return 0


# -- ground --------------------------------------------------------------------

def run_ground(inputs: dict, options: dict, config: RunConfig, out: Path) -> int:
    src = Path(inputs["manifest"])
    _, recs = read_jsonl(src)
    samples = [GroundingSample.from_record(r) for r in recs]
    scorer = get_scorer(config.scorer)
    gcfg = config.grounding()

    def one(sample: GroundingSample):
        try:
            video = load_video(sample, src.parent, config.group_size)
        except (OSError, ValueError) as exc:
            return None, f"{type(exc).__name__}: {exc}"
        q = Query.from_text(sample.query, video.dim, sample.options)
        if config.mode == "single":
            res = ground_single_stage(video, q, scorer, gcfg)
        else:
            res = ground_progressive(video, q, scorer, gcfg)
        return {
            "sample_id": sample.sample_id,
            "window": res.window.interval.as_list(),
            "interval": res.interval.as_list(),
            "mode": res.mode,
            "trace": res.trace.record(),
        }, None

    results = _pmap(one, samples, config.workers)
    preds, quarantine = [], []
    for s, (rec, err) in zip(samples, results):
        if rec is None:
            quarantine.append({"sample_id": s.sample_id, "reason": err})
        else:
            preds.append(rec)
    meta = _meta("ground", inputs, options, config)
    meta["quarantined"] = quarantine
    write_jsonl(out, preds, meta)
    for q in quarantine:
        log.warning("quarantined %s: %s", q["sample_id"], q["reason"])
    if samples and not preds:
        log.error("every sample failed")
        return 1
    return 0


# -- eval ----------------------------------------------------------------------

def _write_report(out_dir: Path, meta: dict, body: dict, text: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"__meta__": meta, "report": body}, indent=1) + "\n")
    with open(out_dir / "report.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + dumps({"__meta__": meta}) + "\n")
        fh.write(text)


def run_eval(inputs: dict, options: dict, config: RunConfig, out: Path) -> int:
    meta = _meta("eval", inputs, options, config)
    if inputs.get("recall_table"):
        _, recs = read_jsonl(inputs["recall_table"])
        rows = [RobustnessRow(r["label"], [float(x) for x in r["recalls"]],
                              r.get("reported_std"), r.get("reported_gap_pct")) for r in recs]
        table = robustness_table(rows)
        _write_report(out, meta, {"robustness": table}, render_robustness(table))
        return 0
    _, pred_recs = read_jsonl(inputs["predictions"])
    _, gt_recs = read_jsonl(inputs["manifest"])
    preds: dict[str, TimeInterval] = {}
    for r in pred_recs:
        if r["sample_id"] in preds:
            raise CommandError(f"duplicate prediction for {r['sample_id']}")
        preds[r["sample_id"]] = TimeInterval.from_pair(r["interval"])
    gts = [GroundingSample.from_record(r) for r in gt_recs]
    report = evaluate(preds, gts, config.thresholds, config.duration_buckets)
    _write_report(out, meta, report.to_dict(), report.render())
    return 0


# -- selftest / replay ---------------------------------------------------------

def run_selftest(inputs: dict, options: dict, config: RunConfig, out: Path | None) -> int:
    from .selftest import run_checks

    results = run_checks(seed=config.seed, quick=bool(options.get("quick")))
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}" + ("" if r.passed else f": {r.detail}"))
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


COMMANDS: dict[str, Callable[[dict, dict, RunConfig, Path], int]] = {
    "generate": run_generate,
    "curate": run_curate,
    "augment": run_augment,
    "ground": run_ground,
    "eval": run_eval,
}


def _read_meta(path: Path) -> dict:
    first = path.read_text(encoding="utf-8").split("\n", 1)[0].removeprefix("# ")
    try:
        doc = json.loads(first)
    except json.JSONDecodeError:
        doc = json.loads(path.read_text(encoding="utf-8"))
    if "__meta__" not in doc:
        raise CommandError(f"{path} carries no run header")
    return doc["__meta__"]


def run_replay(path: Path, out: Path, check: bool) -> int:
    meta = _read_meta(path)
    cmd = meta["command"]
    if cmd not in COMMANDS:
        raise CommandError(f"cannot replay command {cmd!r}")
    config = RunConfig.from_dict(meta["config"])
    code = COMMANDS[cmd](meta["inputs"], meta["options"], config, out)
    if check:
        produced = out / path.name if out.is_dir() else out
        same = produced.read_bytes() == path.read_bytes()
        print("identical" if same else "DIFFERENT")
        return code or (0 if same else 1)
    return code


# -- argument parsing ----------------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _margin(text: str) -> int | None:
    return None if text.lower() in ("inf", "none", "unbounded") else int(text)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", type=Path, help="load defaults from a JSON config or any output header")
    g.add_argument("--pool-factor", type=int)
    g.add_argument("--theta", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--margin", type=_margin, default=argparse.SUPPRESS, help="super-groups of padding; 'inf' for unbounded")
    g.add_argument("--fps", type=float)
    g.add_argument("--max-frames", type=int, help="frame cap at grounding time")
    g.add_argument("--thresholds", type=_floats)
    g.add_argument("--duration-buckets", type=_floats)
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--mode", choices=["progressive", "single"])
    g.add_argument("--scorer")
    g.add_argument("--with-options", action="store_true", default=None)
    g.add_argument("-v", "--verbose", action="store_true")
    return p


_FLAG_TO_FIELD = {
    "pool_factor": "pool_factor", "theta": "theta", "delta": "delta", "fps": "fps",
    "max_frames": "max_frames_eval", "thresholds": "thresholds", "duration_buckets": "duration_buckets",
    "seed": "seed", "workers": "workers", "mode": "mode", "scorer": "scorer", "with_options": "with_options",
}


def _config_from(args: argparse.Namespace) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if args.config else RunConfig().to_dict()
    for flag, name in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            base[name] = value
    if hasattr(args, "margin"):
        base["margin"] = args.margin
    return RunConfig.from_dict(base)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="progressive-grounding", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic corpus")
    p.add_argument("kind", choices=["videos", "clips"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--dim", type=int)
    p.add_argument("--event-len", type=_floats)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--distractors", type=int, default=0)
    p.add_argument("--distractor-amp", type=float, default=0.6)
    p.add_argument("--duration-range", type=_floats)

    p = sub.add_parser("curate", parents=[common], help="build long-video samples from clips")
    p.add_argument("clips", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--target-s", type=float, default=500.0)
    p.add_argument("--min-iou", type=float, default=0.5)
    p.add_argument("--segment-s", type=float, default=30.0)
    p.add_argument("--balance-dims", type=lambda s: [x for x in s.split(",") if x], default=[])
    p.add_argument("--balance-cap", type=int)
    p.add_argument("--hook-timeout-s", type=float, default=30.0)

    p = sub.add_parser("augment", parents=[common], help="apply temporal augmentations")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--kinds", type=lambda s: [x for x in s.split(",") if x], default=["shift"])
    p.add_argument("--shift-offset", type=float)
    p.add_argument("--cut-span", type=float)
    p.add_argument("--scale-factor", type=float)
    p.add_argument("--scale-range", type=_floats)

    p = sub.add_parser("ground", parents=[common], help="predict an interval per sample")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", parents=[common], help="score predictions")
    p.add_argument("predictions", type=Path, nargs="?")
    p.add_argument("manifest", type=Path, nargs="?")
    p.add_argument("--recall-table", type=Path, help="rows of per-position recalls instead of predictions")
    p.add_argument("--out-dir", type=Path, required=True)

    p = sub.add_parser("selftest", parents=[common], help="run the built-in property checks")
    p.add_argument("--quick", action="store_true")

    p = sub.add_parser("replay", help="re-run the command recorded in an output header")
    p.add_argument("output", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--check", action="store_true", help="compare the new output with the original")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _str(path: Path | None) -> str | None:
    return None if path is None else path.as_posix()


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return run_replay(args.output, args.out, args.check)
        config = _config_from(args)
        if args.command == "generate":
            options: dict[str, Any] = {"kind": args.kind, "n": args.n, "frames": args.frames,
                                       "noise": args.noise, "distractors": args.distractors,
                                       "distractor_amp": args.distractor_amp}
            if args.dim is not None:
                options["dim"] = args.dim
            if args.event_len:
                options["event_len"] = [int(x) for x in args.event_len]
            if args.duration_range:
                options["duration_range"] = [int(x) for x in args.duration_range]
            return run_generate({}, options, config, args.out)
        if args.command == "curate":
            options = {"target_s": args.target_s, "min_iou": args.min_iou, "segment_s": args.segment_s,
                       "balance_dims": args.balance_dims, "balance_cap": args.balance_cap,
                       "hook_timeout_s": args.hook_timeout_s}
            return run_curate({"clips": _str(args.clips)}, options, config, args.out)
        if args.command == "augment":
            options = {"kinds": args.kinds, "shift_offset": args.shift_offset,
                       "cut_span": args.cut_span, "scale_factor": args.scale_factor}
            if args.scale_range:
                options["scale_range"] = args.scale_range
            return run_augment({"manifest": _str(args.manifest)}, options, config, args.out)
        if args.command == "ground":
            return run_ground({"manifest": _str(args.manifest)}, {}, config, args.out)
        if args.command == "eval":
            if args.recall_table is None and (args.predictions is None or args.manifest is None):
                raise CommandError("eval needs PREDICTIONS and MANIFEST, or --recall-table")
            inputs = {"predictions": _str(args.predictions), "manifest": _str(args.manifest),
                      "recall_table": _str(args.recall_table)}
            return run_eval(inputs, {}, config, args.out_dir)
        if args.command == "selftest":
            return run_selftest({}, {"quick": args.quick}, config, None)
    except (CommandError, ValueError, FileNotFoundError, KeyError) as exc:
        log.error("%s", exc)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
