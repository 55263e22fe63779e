"""Cleaning, concatenation, rescoring and selection of raw alignments.

Stages run in a fixed order (see :func:`run_postprocess`):

1. drop deletions, blacklisted entries and the costliest alignments
2. drop alignments whose two sides are the same recording
3. concatenate runs of consecutive alignments (monotone input only)
4. drop alignments shorter than ``min_align_duration``
5. score every alignment with a corpus-wide margin
6. drop short and heavily overlapping alignments
7. optionally keep the best ``hours`` of audio
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Alignment, DataError, EmbeddingMatrix, Segment, Span, span_duration, span_times
from .fbank import fbank_similarity
from .mining import neighbor_means
from .vecalign import _unit

logger = logging.getLogger(__name__)

Segments = Mapping[str, Sequence[Segment]]


@dataclass(frozen=True)
class PostConfig:
    cost_keep_fraction: float = 0.8
    max_concat_count: int = 3
    max_concat_duration: float = 20.0
    max_overlap: float = 0.8
    min_align_duration: float = 1.0
    min_final_duration: float = 2.0
    k: int = 4
    dur_thresh: float = 0.1
    sim_thresh: float = 5.0

    def __post_init__(self):
        if not 0 < self.cost_keep_fraction <= 1:
            raise ValueError("cost_keep_fraction must be in (0, 1]")
        if not 0 < self.max_overlap <= 1:
            raise ValueError("max_overlap must be in (0, 1]")
        if self.max_concat_count < 1 or self.k < 1:
            raise ValueError("max_concat_count and k must be >= 1")
        for name in ("max_concat_duration", "min_align_duration", "min_final_duration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class StageCount:
    stage: str
    n_in: int
    n_out: int
    note: str = ""


@dataclass
class PostResult:
    alignments: list[Alignment]
    stages: list[StageCount] = field(default_factory=list)
    # alignments whose vectors were approximated by a weighted mean
    approximated: int = 0


def _pair_key(a: Alignment):
    return (a.src.doc_id, a.tgt.doc_id)


def filter_raw(alignments: Sequence[Alignment], keep_fraction: float = 0.8) -> list[Alignment]:
    """Drop deletions and blacklisted entries, then keep the cheapest fraction per document pair.

    Alignments without a cost (mined input) are not subject to the cut.
    Input order is preserved.
    """
    live = [(pos, a) for pos, a in enumerate(alignments) if not a.is_deletion and "identical" not in a.flags]
    keep = {pos for pos, a in live if a.cost is None}
    groups = defaultdict(list)
    for pos, a in live:
        if a.cost is not None:
            groups[_pair_key(a)].append((a.cost, pos))
    for items in groups.values():
        items.sort()
        n_keep = math.floor(keep_fraction * len(items) + 1e-9)
        keep.update(pos for _, pos in items[:n_keep])
    return [alignments[pos] for pos in sorted(keep)]


def detect_identical_alignments(
    alignments: Sequence[Alignment],
    fbank: Callable[[str, Span], np.ndarray],
    src_segments: Segments,
    tgt_segments: Segments,
    dur_thresh: float = 0.1,
    sim_thresh: float = 5.0,
) -> tuple[list[Alignment], list[Alignment]]:
    """Split into (kept, removed); removed alignments pair a recording with itself.

    ``fbank(side, span)`` returns the filterbank of a span, ``side`` being
    ``"src"`` or ``"tgt"``.
    """
    kept, removed = [], []
    for a in alignments:
        diff = abs(span_duration(src_segments, a.src) - span_duration(tgt_segments, a.tgt))
        if diff <= dur_thresh and fbank_similarity(fbank("src", a.src), fbank("tgt", a.tgt)) <= sim_thresh:
            removed.append(replace(a, flags=a.flags | {"identical"}))
        else:
            kept.append(a)
    return kept, removed


def _check_monotone(group: Sequence[Alignment]) -> None:
    for prev, cur in zip(group, group[1:]):
        if cur.src.first <= prev.src.last or cur.tgt.first <= prev.tgt.last:
            raise DataError(
                f"alignments are not monotone ({prev.src}, {prev.tgt}) -> ({cur.src}, {cur.tgt}); "
                "skip concatenation for mined alignments"
            )


def concat_alignments(
    alignments: Sequence[Alignment],
    src_segments: Segments,
    tgt_segments: Segments,
    max_count: int = 3,
    max_duration: float = 20.0,
) -> list[Alignment]:
    """Originals plus concatenations of up to ``max_count`` consecutive alignments.

    Alignments are consecutive when both their source and target spans are
    adjacent, i.e. nothing was deleted or filtered between them. A
    concatenation is kept only while both of its spans last at most
    ``max_duration`` seconds.
    """
    groups = defaultdict(list)
    for a in alignments:
        if a.is_deletion:
            raise DataError("concatenation input must not contain deletions")
        groups[_pair_key(a)].append(a)
    out = []
    for key in sorted(groups):
        group = sorted(groups[key], key=lambda a: (a.src.first, a.tgt.first))
        _check_monotone(group)
        for s, first in enumerate(group):
            out.append(first)
            for count in range(2, max_count + 1):
                e = s + count - 1
                if e >= len(group):
                    break
                prev, last = group[e - 1], group[e]
                if last.src.first != prev.src.last + 1 or last.tgt.first != prev.tgt.last + 1:
                    break
                src = Span(first.src.doc_id, first.src.first, last.src.last - first.src.first + 1)
                tgt = Span(first.tgt.doc_id, first.tgt.first, last.tgt.last - first.tgt.first + 1)
                if span_duration(src_segments, src) > max_duration or span_duration(tgt_segments, tgt) > max_duration:
                    break
                parts = tuple(group[s:e + 1])
                costs = [p.cost for p in parts]
                out.append(Alignment(
                    src, tgt,
                    cost=None if None in costs else float(sum(costs)),
                    flags=frozenset({"concatenated"}),
                    parts=parts,
                ))
    return out


def embed_concatenation(vectors: Sequence[np.ndarray], durations: Sequence[float], exact: np.ndarray | None = None) -> np.ndarray:
    """Embedding of a concatenation: ``exact`` when given, else the duration-weighted mean, unit length."""
    if exact is not None:
        return np.asarray(exact, dtype=np.float64)
    if not len(vectors):
        raise DataError("no constituents to embed")
    if len(vectors) == 1:
        return np.asarray(vectors[0], dtype=np.float64)
    w = np.asarray(durations, dtype=np.float64)
    mean = (np.asarray(vectors, dtype=np.float64) * w[:, None]).sum(axis=0) / w.sum()
    return _unit(mean)


class SpanEmbedder:
    """Vectors for alignment spans from precomputed overlap embeddings.

    Spans without a precomputed row fall back to the duration-weighted mean of
    their parts (or of their single segments) and are counted in
    ``approximated``.
    """

    def __init__(self, matrix: EmbeddingMatrix, segments: Segments):
        self.matrix = matrix
        self.segments = segments
        self.approximated = 0

    def span(self, span: Span) -> np.ndarray:
        v = self.matrix.lookup(span.doc_id, span.first, span.count)
        if v is not None:
            return v
        singles = [self.matrix.lookup(span.doc_id, i, 1) for i in span.indices()]
        for i, s in zip(span.indices(), singles):
            if s is None:
                raise DataError(f"no embedding for segment {span.doc_id}#{i}")
        self.approximated += 1
        durs = [self.segments[span.doc_id][i].duration for i in span.indices()]
        return embed_concatenation(singles, durs)

    def side(self, a: Alignment, side: str) -> np.ndarray:
        sp = getattr(a, side)
        v = self.matrix.lookup(sp.doc_id, sp.first, sp.count)
        if v is not None or not a.parts:
            return v if v is not None else self.span(sp)
        self.approximated += 1
        parts = [getattr(p, side) for p in a.parts]
        return embed_concatenation(
            [self.span(p) for p in parts],
            [span_duration(self.segments, p) for p in parts],
        )


def global_margin(alignments: Sequence[Alignment], src_vectors: np.ndarray, tgt_vectors: np.ndarray, k: int = 4) -> list[Alignment]:
    """Margin of every alignment against the bags of all alignment source and target vectors."""
    if len(alignments) < 1:
        raise DataError("global margin needs at least one alignment")
    S = _unit(np.asarray(src_vectors, dtype=np.float64))
    T = _unit(np.asarray(tgt_vectors, dtype=np.float64))
    if S.shape != T.shape or len(S) != len(alignments):
        raise DataError("one source and one target vector per alignment required")
    r_s = neighbor_means(S, T, k)
    r_t = neighbor_means(T, S, k)
    cos = np.einsum("ij,ij->i", S, T)
    den = (r_s + r_t) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        margins = np.where(den != 0, cos / den, -np.inf)
    return [replace(a, margin=float(m)) for a, m in zip(alignments, margins)]


def drop_short(alignments: Sequence[Alignment], src_segments: Segments, min_duration: float) -> list[Alignment]:
    return [a for a in alignments if span_duration(src_segments, a.src) >= min_duration]


def overlap_ratio(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Overlapped duration over the longer of the two spans."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    longest = max(a[1] - a[0], b[1] - b[0])
    return inter / longest if longest > 0 else 0.0


def remove_overlapped(
    alignments: Sequence[Alignment],
    src_segments: Segments,
    max_overlap: float = 0.8,
    min_duration: float = 0.0,
) -> list[Alignment]:
    """Drop short alignments, then resolve overlaps between source-time neighbours.

    Whenever two consecutive alignments (ordered by source start, then end)
    overlap by more than ``max_overlap`` of the longer source span, the one
    with the lower margin goes; on equal margins the later one goes. The
    result has no consecutive pair above the threshold.
    """
    for a in alignments:
        if a.margin is None:
            raise DataError(f"alignment {a.src} -> {a.tgt} has no margin")
    items = []
    for a in alignments:
        t = span_times(src_segments, a.src)
        if t[1] - t[0] >= min_duration:
            items.append((a.src.doc_id, t, a))
    items.sort(key=lambda x: (x[0], x[1][0], x[1][1], x[2].sort_key()))
    kept: list[tuple[str, tuple[float, float], Alignment]] = []
    for item in items:
        doc, t, a = item
        beaten = False
        while kept and kept[-1][0] == doc and overlap_ratio(kept[-1][1], t) > max_overlap:
            if a.margin > kept[-1][2].margin:
                kept.pop()
            else:
                beaten = True
                break
        if not beaten:
            kept.append(item)
    return [x[2] for x in kept]


def select_top(
    alignments: Sequence[Alignment],
    src_segments: Segments,
    hours: float,
    min_duration: float = 0.0,
) -> list[Alignment]:
    """Best-margin alignments until their source audio reaches ``hours`` (the crossing item is included)."""
    for a in alignments:
        if a.margin is None:
            raise DataError(f"alignment {a.src} -> {a.tgt} has no margin")
    pool = [(span_duration(src_segments, a.src), a) for a in alignments]
    pool = [(d, a) for d, a in pool if d >= min_duration]
    pool.sort(key=lambda x: (-x[1].margin, x[1].sort_key()))
    target = hours * 3600.0
    out, total = [], 0.0
    for d, a in pool:
        if total >= target:
            break
        out.append(a)
        total += d
    return out


def run_postprocess(
    alignments: Sequence[Alignment],
    src_segments: Segments,
    tgt_segments: Segments,
    src_emb: EmbeddingMatrix,
    tgt_emb: EmbeddingMatrix,
    config: PostConfig = PostConfig(),
    *,
    fbank: Callable[[str, Span], np.ndarray] | None = None,
    concatenate: bool = True,
    hours: float | None = None,
) -> PostResult:
    """All stages in their fixed order, with per-stage counts."""
    res = PostResult([])

    def stage(name, before, after, note=""):
        res.stages.append(StageCount(name, len(before), len(after), note))
        logger.info("%s: %d -> %d %s", name, len(before), len(after), note)
        return after

    cur = list(alignments)
    cur = stage("filter_raw", cur, filter_raw(cur, config.cost_keep_fraction))
    if fbank is not None:
        kept, _ = detect_identical_alignments(cur, fbank, src_segments, tgt_segments, config.dur_thresh, config.sim_thresh)
        cur = stage("remove_identical", cur, kept)
    else:
        cur = stage("remove_identical", cur, cur, "skipped: no audio")
    if concatenate:
        cur = stage("concatenate", cur, concat_alignments(
            cur, src_segments, tgt_segments, config.max_concat_count, config.max_concat_duration))
    else:
        cur = stage("concatenate", cur, cur, "skipped")
    cur = stage("remove_short", cur, drop_short(cur, src_segments, config.min_align_duration))
    if cur:
        src_e, tgt_e = SpanEmbedder(src_emb, src_segments), SpanEmbedder(tgt_emb, tgt_segments)
        S = np.array([src_e.side(a, "src") for a in cur])
        T = np.array([tgt_e.side(a, "tgt") for a in cur])
        res.approximated = src_e.approximated + tgt_e.approximated
        cur = stage("global_margin", cur, global_margin(cur, S, T, config.k))
    else:
        cur = stage("global_margin", cur, cur)
    cur = stage("remove_overlapped", cur, remove_overlapped(
        cur, src_segments, config.max_overlap, config.min_final_duration))
    if hours is not None:
        cur = stage("select_top", cur, select_top(cur, src_segments, hours, config.min_align_duration))
    res.alignments = sorted(cur, key=lambda a: (-a.margin, a.sort_key()))
    return res
