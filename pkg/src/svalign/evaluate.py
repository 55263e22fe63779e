"""Alignment quality metrics.

Deletions (alignments with an empty side) never take part in scoring or
order statistics.
"""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .data import Alignment, DataError, DocumentPair, Segment, span_duration, span_times


@dataclass(frozen=True)
class PRReport:
    mode: str
    precision: float
    recall: float
    f1: float
    tp_system: int
    n_system: int
    tp_reference: int
    n_reference: int


@dataclass(frozen=True)
class OrderReport:
    total: int
    out_of_pair: int
    out_of_pair_fraction: float
    in_pair: int
    out_of_order: int
    out_of_order_fraction: float


@dataclass(frozen=True)
class DurationReport:
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    fractions: tuple[float, ...]
    mean: float | None
    total: int

    def labels(self) -> list[str]:
        e = self.edges
        out = [f"<={e[0]:g}"]
        out += [f"({a:g},{b:g}]" for a, b in zip(e, e[1:])]
        out.append(f">{e[-1]:g}")
        return out


def f1_score(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _scorable(alignments: Iterable[Alignment]) -> list[Alignment]:
    return [a for a in alignments if not a.is_deletion]


def _strict_hits(system: Sequence[Alignment], reference: Sequence[Alignment]) -> int:
    ref = {(a.src, a.tgt) for a in reference}
    return sum((a.src, a.tgt) in ref for a in system)


def _intervals(alignments, segments):
    """(src_lo, src_hi, tgt_lo, tgt_hi) per alignment, grouped by document pair."""
    groups = defaultdict(list)
    for a in alignments:
        if segments is None:
            row = (a.src.first, a.src.last, a.tgt.first, a.tgt.last)
        else:
            row = (*span_times(segments[0], a.src), *span_times(segments[1], a.tgt))
        groups[(a.src.doc_id, a.tgt.doc_id)].append(row)
    return {k: np.array(v, dtype=np.float64) for k, v in groups.items()}


def _lax_hits(system, reference, segments) -> int:
    ref = _intervals(reference, segments)
    sys_groups = _intervals(system, segments)
    hits = 0
    for key, s_all in sys_groups.items():
        r = ref.get(key)
        if r is None:
            continue
        for c in range(0, len(s_all), 1024):
            s = s_all[c:c + 1024]
            if segments is None:  # inclusive index ranges
                src = (r[None, :, 0] <= s[:, None, 1]) & (s[:, None, 0] <= r[None, :, 1])
                tgt = (r[None, :, 2] <= s[:, None, 3]) & (s[:, None, 2] <= r[None, :, 3])
            else:  # time ranges, positive-length intersection
                src = (r[None, :, 0] < s[:, None, 1]) & (s[:, None, 0] < r[None, :, 1])
                tgt = (r[None, :, 2] < s[:, None, 3]) & (s[:, None, 2] < r[None, :, 3])
            hits += int((src & tgt).any(axis=1).sum())
    return hits


def score_pr(
    system: Iterable[Alignment],
    reference: Iterable[Alignment],
    mode: str = "strict",
    segments: tuple[Mapping[str, Sequence[Segment]], Mapping[str, Sequence[Segment]]] | None = None,
) -> PRReport:
    """Precision/recall of ``system`` against ``reference``.

    ``strict`` counts identical (source span, target span) pairs. ``lax``
    counts a system alignment when some reference alignment overlaps it on
    both sides; overlap is by segment index unless ``segments`` (source and
    target manifests) is given, in which case it is by time. Recall swaps the
    roles of the two sets.
    """
    if mode not in ("strict", "lax"):
        raise ValueError(f"unknown mode {mode!r}")
    sys_ = _scorable(system)
    ref = _scorable(reference)
    if mode == "strict":
        tp_s, tp_r = _strict_hits(sys_, ref), _strict_hits(ref, sys_)
    else:
        tp_s, tp_r = _lax_hits(sys_, ref, segments), _lax_hits(ref, sys_, segments)
    p = tp_s / len(sys_) if sys_ else 0.0
    r = tp_r / len(ref) if ref else 0.0
    return PRReport(mode, p, r, f1_score(p, r), tp_s, len(sys_), tp_r, len(ref))


def out_of_order_flags(alignments: Sequence[Alignment]) -> np.ndarray:
    """Per alignment: is it out of order with some other alignment of the same document pair?"""
    flags = np.zeros(len(alignments), dtype=bool)
    groups = defaultdict(list)
    for i, a in enumerate(alignments):
        groups[(a.src.doc_id, a.tgt.doc_id)].append(i)
    for rows in groups.values():
        if len(rows) < 2:
            continue
        g = [alignments[i] for i in rows]
        a_s = np.array([x.src.first for x in g])
        a_e = np.array([x.src.last for x in g])
        b_s = np.array([x.tgt.first for x in g])
        b_e = np.array([x.tgt.last for x in g])
        bad = np.zeros(len(g), dtype=bool)
        for s in range(0, len(g), 1024):
            sl = slice(s, s + 1024)
            before = (a_e[sl, None] < a_s[None, :]) & (b_e[sl, None] < b_s[None, :])
            after = (a_s[sl, None] > a_e[None, :]) & (b_s[sl, None] > b_e[None, :])
            viol = ~(before | after)
            idx = np.arange(s, min(s + 1024, len(g)))
            viol[np.arange(len(idx)), idx] = False
            bad[sl] = viol.any(axis=1)
        flags[rows] = bad
    return flags


def order_stats(
    alignments: Iterable[Alignment],
    pairs: Sequence[DocumentPair],
    known_docs: tuple[Iterable[str], Iterable[str]] | None = None,
) -> OrderReport:
    """Out-of-pair and out-of-order counts.

    The out-of-order fraction counts alignments involved in at least one
    violation, relative to the in-pair alignments.
    """
    items = _scorable(alignments)
    paired = {(p.src_doc_id, p.tgt_doc_id) for p in pairs}
    src_known = {p.src_doc_id for p in pairs}
    tgt_known = {p.tgt_doc_id for p in pairs}
    if known_docs is not None:
        src_known |= set(known_docs[0])
        tgt_known |= set(known_docs[1])
    for a in items:
        if a.src.doc_id not in src_known:
            raise DataError(f"unknown source document {a.src.doc_id}")
        if a.tgt.doc_id not in tgt_known:
            raise DataError(f"unknown target document {a.tgt.doc_id}")
    in_pair = [a for a in items if (a.src.doc_id, a.tgt.doc_id) in paired]
    n_oop = len(items) - len(in_pair)
    n_ooo = int(out_of_order_flags(in_pair).sum())
    return OrderReport(
        total=len(items),
        out_of_pair=n_oop,
        out_of_pair_fraction=n_oop / len(items) if items else 0.0,
        in_pair=len(in_pair),
        out_of_order=n_ooo,
        out_of_order_fraction=n_ooo / len(in_pair) if in_pair else 0.0,
    )


def histogram(durations: Sequence[float], edges: Sequence[float]) -> DurationReport:
    edges = tuple(float(e) for e in edges)
    if not edges:
        raise ValueError("bucket edges must be non-empty")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bucket edges must be strictly increasing")
    d = np.asarray(durations, dtype=np.float64)
    # bucket k holds edges[k-1] < d <= edges[k]
    idx = np.searchsorted(np.asarray(edges), d, side="left")
    counts = np.bincount(idx, minlength=len(edges) + 1)
    n = len(d)
    fractions = tuple(float(c / n) if n else 0.0 for c in counts)
    return DurationReport(edges, tuple(int(c) for c in counts), fractions, float(d.mean()) if n else None, n)


def duration_stats(
    alignments: Iterable[Alignment],
    segments: Mapping[str, Sequence[Segment]],
    edges: Sequence[float],
) -> DurationReport:
    """Histogram of source durations of non-deletion alignments."""
    durations = [span_duration(segments, a.src) for a in _scorable(alignments)]
    return histogram(durations, edges)
