"""Token sequences and the layered key/value cache used by grounding.

A video becomes an interleaved token sequence: every ``group_size`` frames are
preceded by a timestamp token, and the query tokens come last. ``prefill``
turns that sequence into a fine cache with one key/value pair per token per
layer. ``pool_cache`` averages consecutive visual entries into a coarse cache
and ``select_window`` reloads only the fine entries inside a time window.

At this scale each frame contributes exactly one visual token, so a "visual
entry" and a "frame" are the same thing, and pooling by ``factor`` averages
``factor`` consecutive frames.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .intervals import TimeInterval

VISUAL, TIMESTAMP, QUERY = 0, 1, 2
KIND_NAMES = {VISUAL: "visual", TIMESTAMP: "timestamp", QUERY: "query"}

FINE, COARSE = "fine", "coarse"

_TIMESTAMP_RE = re.compile(r"^Time: (-?\d+(?:\.\d+)?) Second$")


def render_timestamp(time_s: float) -> str:
    return f"Time: {time_s:.1f} Second"


def parse_timestamp(text: str) -> float:
    m = _TIMESTAMP_RE.match(text)
    if m is None:
        raise ValueError(f"not a timestamp token: {text!r}")
    return float(m.group(1))


@dataclass(frozen=True)
class TimestampToken:
    group_index: int
    time_s: float

    @property
    def text(self) -> str:
        return render_timestamp(self.time_s)


@dataclass
class FrameSequence:
    """Per-frame feature vectors sampled at a fixed rate.

    ``frames`` is an ``(n, d)`` array. Frame ``i`` sits at ``frame_times[i]`` and
    covers one frame period. ``duration_s`` is the length of the video timeline
    ``[0, duration_s]``; it defaults to the end of the last frame.
    """

    video_id: str
    frames: np.ndarray
    fps: float = 1.0
    frame_times: np.ndarray | None = None
    group_size: int = 4
    duration_s: float | None = None

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] == 0:
            raise ValueError(f"video {self.video_id!r}: frames must be a non-empty (n, d) array")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.group_size < 1:
            raise ValueError(f"group_size must be >= 1, got {self.group_size}")
        n = self.frames.shape[0]
        if self.frame_times is None:
            self.frame_times = np.arange(n, dtype=np.float64) / self.fps
        else:
            self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
            if self.frame_times.shape != (n,):
                raise ValueError("frame_times must have one entry per frame")
            if self.frame_times[0] < 0:
                raise ValueError("frame times must be non-negative")
            if n > 1:
                steps = np.diff(self.frame_times)
                if np.any(steps <= 0):
                    raise ValueError("frame_times must be strictly increasing")
                if not np.allclose(steps, self.period, rtol=1e-9, atol=1e-9):
                    raise ValueError("frame spacing must equal 1/fps")
        end = float(self.frame_times[-1]) + self.period
        if self.duration_s is None:
            self.duration_s = end
        elif self.duration_s < end - 1e-9:
            raise ValueError(f"duration {self.duration_s} ends before the last frame ({end})")

    @property
    def period(self) -> float:
        return 1.0 / self.fps

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def n_groups(self) -> int:
        return math.ceil(self.n_frames / self.group_size)

    def timestamp_tokens(self) -> list[TimestampToken]:
        g = self.group_size
        return [TimestampToken(k, float(self.frame_times[k * g])) for k in range(self.n_groups)]


def subsample(video: FrameSequence, max_frames: int) -> FrameSequence:
    """Cap a video at ``max_frames`` by keeping every ``stride``-th frame.

    An integer stride keeps frame spacing uniform, so the result may hold fewer
    than ``max_frames`` frames.
    """
    if max_frames < 1:
        raise ValueError(f"max_frames must be >= 1, got {max_frames}")
    if video.n_frames <= max_frames:
        return video
    stride = math.ceil(video.n_frames / max_frames)
    return FrameSequence(
        video_id=video.video_id,
        frames=video.frames[::stride],
        fps=video.fps / stride,
        frame_times=video.frame_times[::stride],
        group_size=video.group_size,
        duration_s=video.duration_s,
    )


@dataclass
class TokenSequence:
    """Interleaved tokens stored column-wise.

    ``frame_index`` is -1 for non-visual tokens; ``group_index`` is -1 for query
    tokens. ``times`` holds the frame time for visual tokens and the group's
    first frame time for timestamp tokens.
    """

    video_id: str
    kinds: np.ndarray
    group_index: np.ndarray
    frame_index: np.ndarray
    times: np.ndarray
    embeddings: np.ndarray
    texts: list[str]
    fps: float
    duration_s: float
    group_size: int

    def __len__(self) -> int:
        return len(self.kinds)

    def count(self, kind: int) -> int:
        return int(np.count_nonzero(self.kinds == kind))


def timestamp_embedding(time_s: float, dim: int) -> np.ndarray:
    """Sinusoidal encoding of a wall-clock time."""
    i = np.arange(dim)
    rates = 1.0 / np.power(10000.0, (2 * (i // 2)) / max(dim, 1))
    angles = time_s * rates
    return np.where(i % 2 == 0, np.sin(angles), np.cos(angles))


def build_sequence(video: FrameSequence, query_embedding: np.ndarray) -> TokenSequence:
    q = np.atleast_2d(np.asarray(query_embedding, dtype=np.float64))
    if q.shape[1] != video.dim:
        raise ValueError(f"query dimension {q.shape[1]} does not match frame dimension {video.dim}")
    g = video.group_size
    kinds, groups, frames, times, embs, texts = [], [], [], [], [], []
    for tok in video.timestamp_tokens():
        kinds.append(TIMESTAMP)
        groups.append(tok.group_index)
        frames.append(-1)
        times.append(tok.time_s)
        embs.append(timestamp_embedding(tok.time_s, video.dim))
        texts.append(tok.text)
        for f in range(tok.group_index * g, min((tok.group_index + 1) * g, video.n_frames)):
            kinds.append(VISUAL)
            groups.append(tok.group_index)
            frames.append(f)
            times.append(float(video.frame_times[f]))
            embs.append(video.frames[f])
            texts.append("")
    for row in q:
        kinds.append(QUERY)
        groups.append(-1)
        frames.append(-1)
        times.append(float("nan"))
        embs.append(row)
        texts.append("<query>")
    return TokenSequence(
        video_id=video.video_id,
        kinds=np.asarray(kinds, dtype=np.int8),
        group_index=np.asarray(groups, dtype=np.int64),
        frame_index=np.asarray(frames, dtype=np.int64),
        times=np.asarray(times, dtype=np.float64),
        embeddings=np.vstack(embs),
        texts=texts,
        fps=video.fps,
        duration_s=float(video.duration_s),
        group_size=g,
    )


@dataclass(frozen=True)
class PrefillParams:
    """Projection setup for the toy prefill.

    Layer 0 keys are the token embeddings; each further layer applies a seeded
    orthogonal rotation, so inner products between keys are the same on every
    layer and stay linear under averaging.
    """

    layers: int = 2
    seed: int = 0

    def projections(self, dim: int) -> list[tuple[np.ndarray, np.ndarray]]:
        rng = np.random.default_rng(self.seed)
        out = [(np.eye(dim), np.eye(dim))]
        for _ in range(1, self.layers):
            mats = []
            for _ in range(2):
                qm, r = np.linalg.qr(rng.standard_normal((dim, dim)))
                mats.append(qm * np.sign(np.diag(r)))
            out.append((mats[0], mats[1]))
        return out[: self.layers]


@dataclass
class LayerCache:
    """Per-layer key/value states with the origin tags of every position.

    ``span_end`` gives, for visual entries, the end of the time span the entry
    covers (one frame period for fine entries, the whole super-group for pooled
    ones). ``n_source_frames`` is the frame count of the video the cache came from.
    """

    video_id: str
    keys: list[np.ndarray]
    values: list[np.ndarray]
    kinds: np.ndarray
    group_index: np.ndarray
    frame_index: np.ndarray
    times: np.ndarray
    span_end: np.ndarray
    granularity: str
    fps: float
    duration_s: float
    n_source_frames: int
    pool_factor: int | None = None
    texts: list[str] = field(default_factory=list)

    @property
    def layer_count(self) -> int:
        return len(self.keys)

    def __len__(self) -> int:
        return len(self.kinds)

    @property
    def visual_mask(self) -> np.ndarray:
        return self.kinds == VISUAL

    @property
    def n_visual(self) -> int:
        return int(np.count_nonzero(self.visual_mask))

    def take(self, index: np.ndarray, **overrides) -> "LayerCache":
        index = np.asarray(index, dtype=np.int64)
        fields = dict(
            video_id=self.video_id,
            keys=[k[index] for k in self.keys],
            values=[v[index] for v in self.values],
            kinds=self.kinds[index],
            group_index=self.group_index[index],
            frame_index=self.frame_index[index],
            times=self.times[index],
            span_end=self.span_end[index],
            granularity=self.granularity,
            fps=self.fps,
            duration_s=self.duration_s,
            n_source_frames=self.n_source_frames,
            pool_factor=self.pool_factor,
            texts=[self.texts[i] for i in index],
        )
        fields.update(overrides)
        return LayerCache(**fields)


def prefill(seq: TokenSequence, params: PrefillParams | None = None) -> LayerCache:
    params = params or PrefillParams()
    if len(seq) == 0:
        raise ValueError("cannot prefill an empty sequence")
    x = seq.embeddings
    keys, values = [], []
    for wk, wv in params.projections(x.shape[1]):
        keys.append(x @ wk)
        values.append(x @ wv)
    period = 1.0 / seq.fps
    span_end = np.where(seq.kinds == VISUAL, seq.times + period, np.nan)
    n_frames = seq.count(VISUAL)
    return LayerCache(
        video_id=seq.video_id,
        keys=keys,
        values=values,
        kinds=seq.kinds.copy(),
        group_index=seq.group_index.copy(),
        frame_index=seq.frame_index.copy(),
        times=seq.times.copy(),
        span_end=span_end,
        granularity=FINE,
        fps=seq.fps,
        duration_s=seq.duration_s,
        n_source_frames=n_frames,
        texts=list(seq.texts),
    )


def pool_cache(fine: LayerCache, factor: int) -> LayerCache:
    """Average every ``factor`` consecutive visual entries into one coarse entry.

    Each super-group is preceded by a copy of the timestamp entry of the group
    holding its earliest frame. Query entries are carried over unpooled.
    """
    if factor < 1:
        raise ValueError(f"pool factor must be >= 1, got {factor}")
    if fine.granularity != FINE:
        raise ValueError("cache is already coarse")
    vis = np.flatnonzero(fine.visual_mask)
    ts = np.flatnonzero(fine.kinds == TIMESTAMP)
    ts_by_group = {int(fine.group_index[i]): i for i in ts}
    qry = np.flatnonzero(fine.kinds == QUERY)
    n_super = math.ceil(len(vis) / factor)
    L = fine.layer_count

    keys = [[] for _ in range(L)]
    values = [[] for _ in range(L)]
    kinds, groups, frames, times, span_end, texts = [], [], [], [], [], []

    def copy_entry(i: int) -> None:
        for l in range(L):
            keys[l].append(fine.keys[l][i])
            values[l].append(fine.values[l][i])
        kinds.append(int(fine.kinds[i]))
        groups.append(int(fine.group_index[i]))
        frames.append(int(fine.frame_index[i]))
        times.append(float(fine.times[i]))
        span_end.append(float(fine.span_end[i]))
        texts.append(fine.texts[i])

    for s in range(n_super):
        members = vis[s * factor:(s + 1) * factor]
        first = members[0]
        copy_entry(ts_by_group[int(fine.group_index[first])])
        for l in range(L):
            keys[l].append(fine.keys[l][members].mean(axis=0))
            values[l].append(fine.values[l][members].mean(axis=0))
        kinds.append(VISUAL)
        groups.append(s)
        frames.append(int(fine.frame_index[first]))
        times.append(float(fine.times[first]))
        span_end.append(float(fine.span_end[members[-1]]))
        texts.append("")
    for i in qry:
        copy_entry(i)

    return LayerCache(
        video_id=fine.video_id,
        keys=[np.vstack(k) for k in keys],
        values=[np.vstack(v) for v in values],
        kinds=np.asarray(kinds, dtype=np.int8),
        group_index=np.asarray(groups, dtype=np.int64),
        frame_index=np.asarray(frames, dtype=np.int64),
        times=np.asarray(times, dtype=np.float64),
        span_end=np.asarray(span_end, dtype=np.float64),
        granularity=COARSE,
        fps=fine.fps,
        duration_s=fine.duration_s,
        n_source_frames=fine.n_source_frames,
        pool_factor=factor,
        texts=texts,
    )


def select_window(fine: LayerCache, window: TimeInterval) -> LayerCache:
    """Keep the fine entries whose frame time lies in the closed window.

    Timestamp entries of groups with at least one kept frame stay, as do all
    query entries. Order is preserved and vectors are not copied or modified
    beyond indexing.
    """
    if fine.granularity != FINE:
        raise ValueError("select_window needs a fine cache")
    vis = fine.visual_mask
    in_win = vis & (fine.times >= window.start_s) & (fine.times <= window.end_s)
    if not in_win.any():
        raise ValueError(
            f"window {window.as_list()} holds no frames of video {fine.video_id!r}"
        )
    kept_groups = np.unique(fine.group_index[in_win])
    keep = in_win | ((fine.kinds == TIMESTAMP) & np.isin(fine.group_index, kept_groups))
    keep |= fine.kinds == QUERY
    return fine.take(np.flatnonzero(keep))


@dataclass(frozen=True)
class TokenBudget:
    """Visual-entry counts attended by each way of grounding one video."""

    single_stage: int
    stage1: int
    stage2: int

    @property
    def progressive(self) -> int:
        return self.stage1 + self.stage2

    @property
    def saves(self) -> bool:
        return self.progressive < self.single_stage

    def as_dict(self) -> dict:
        return {
            "single_stage": self.single_stage,
            "stage1": self.stage1,
            "stage2": self.stage2,
            "progressive": self.progressive,
        }


def token_budget(fine: LayerCache, coarse: LayerCache, restricted: LayerCache) -> TokenBudget:
    ids = {fine.video_id, coarse.video_id, restricted.video_id}
    if len(ids) != 1:
        raise ValueError(f"caches come from different videos: {sorted(ids)}")
    return TokenBudget(single_stage=fine.n_visual, stage1=coarse.n_visual, stage2=restricted.n_visual)
