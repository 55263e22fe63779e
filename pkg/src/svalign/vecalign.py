"""Monotone segment alignment over overlap embeddings.

The aligner scores a block of ``i`` source segments against ``j`` target
segments with a cosine cost that is normalised by randomly sampled pairs and
multiplied by ``i * j``. A dynamic program over the (source, target) lattice
finds the cheapest monotone path; long documents are handled coarse to fine
by averaging neighbouring vectors, solving the short problem exactly and
refining inside a band around the projected path.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .data import Alignment, DataError, EmbeddingMatrix, Span

logger = logging.getLogger(__name__)

# relative slack under which two path costs count as tied
TIE_TOL = 1e-12
_START = -2
_HORIZONTAL = -1


@dataclass(frozen=True)
class AlignParams:
    sample_size: int = 128
    window_radius: int = 10
    base_case_size: int = 128
    deletion_percentile: float = 20.0
    max_block: int = 5
    seed: int = 0
    # fixed deletion cost; when None it is a percentile of sampled 1-1 costs
    deletion_cost: float | None = None

    def __post_init__(self):
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.base_case_size < 2:
            raise ValueError("base_case_size must be >= 2")
        if not 0 < self.deletion_percentile < 100:
            raise ValueError("deletion_percentile must be in (0, 100)")
        if self.max_block < 1:
            raise ValueError("max_block must be >= 1")
        if self.deletion_cost is not None and not self.deletion_cost >= 0:
            raise ValueError("deletion_cost must be >= 0")


@dataclass(frozen=True)
class PathEntry:
    src: tuple[int, int] | None  # (first, count)
    tgt: tuple[int, int] | None
    cost: float
    # touches an all-zero (blacklisted) vector
    blank: bool = False

    @property
    def is_deletion(self) -> bool:
        return self.src is None or self.tgt is None


@dataclass
class AlignPath:
    entries: list[PathEntry]
    deletion_cost: float
    cells_evaluated: int = 0
    levels: int = 1

    @property
    def total_cost(self) -> float:
        return float(sum(e.cost for e in self.entries))

    def lattice_points(self) -> list[tuple[int, int]]:
        a = b = 0
        pts = [(0, 0)]
        for e in self.entries:
            a += e.src[1] if e.src else 0
            b += e.tgt[1] if e.tgt else 0
            pts.append((a, b))
        return pts

    def to_alignments(self, src_doc: str, tgt_doc: str) -> list[Alignment]:
        out = []
        for e in self.entries:
            flags = set()
            if e.is_deletion:
                flags.add("deleted")
            if e.blank:
                flags.add("identical")
            out.append(Alignment(
                Span(src_doc, *e.src) if e.src else None,
                Span(tgt_doc, *e.tgt) if e.tgt else None,
                cost=e.cost,
                flags=frozenset(flags),
            ))
        return out


def check_path(path: AlignPath, n_src: int, n_tgt: int) -> None:
    """Raise if ``path`` is not monotone or does not cover both sides exactly."""
    a = b = 0
    for e in path.entries:
        if e.src is None and e.tgt is None:
            raise DataError("empty path entry")
        if e.src is not None:
            if e.src[0] != a or e.src[1] < 1:
                raise DataError(f"source span {e.src} does not continue at {a}")
            a += e.src[1]
        if e.tgt is not None:
            if e.tgt[0] != b or e.tgt[1] < 1:
                raise DataError(f"target span {e.tgt} does not continue at {b}")
            b += e.tgt[1]
    if (a, b) != (n_src, n_tgt):
        raise DataError(f"path ends at {(a, b)}, expected {(n_src, n_tgt)}")


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, norms, out=np.zeros_like(v), where=norms > 0)


def cosine(x, y) -> float:
    """Cosine similarity; 0 when either vector is zero."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"dim mismatch {x.shape} vs {y.shape}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        return 0.0
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def alignment_cost(x, y, nsegs_x: int, nsegs_y: int, src_samples, tgt_samples) -> float:
    """Cost of aligning embedding ``x`` (nsegs_x segments) with ``y`` (nsegs_y)."""
    src_samples = list(src_samples)
    tgt_samples = list(tgt_samples)
    if not src_samples or not tgt_samples:
        raise DataError("normalizer samples must be non-empty")
    num = (1.0 - cosine(x, y)) * nsegs_x * nsegs_y
    den = sum(1.0 - cosine(x, ys) for ys in tgt_samples) / (2 * len(tgt_samples))
    den += sum(1.0 - cosine(xs, y) for xs in src_samples) / (2 * len(src_samples))
    if den == 0:
        return float("inf")
    return num / den


class DocVectors:
    """Overlap embeddings of one document, grouped by block size.

    ``rows[c]`` has one row per start index ``0 .. n - c``; ``present[c]``
    marks which of those overlaps exist (duration limits drop some).
    """

    def __init__(self, n: int, rows: dict[int, np.ndarray], present: dict[int, np.ndarray] | None = None):
        if 1 not in rows and n > 0:
            raise DataError("single-segment embeddings are required")
        self.n = n
        self.raw = {c: np.asarray(r, dtype=np.float64) for c, r in rows.items()}
        self.present = present or {c: np.ones(len(r), dtype=bool) for c, r in self.raw.items()}
        for c, r in self.raw.items():
            if len(r) != max(n - c + 1, 0):
                raise DataError(f"count {c}: expected {max(n - c + 1, 0)} rows, got {len(r)}")
        if n > 0 and not self.present[1].all():
            missing = int(np.flatnonzero(~self.present[1])[0])
            raise DataError(f"missing single-segment embedding for segment {missing}")
        self.unit = {c: _unit(r) for c, r in self.raw.items()}
        self.zero = {c: ~np.any(r != 0, axis=1) for c, r in self.raw.items()}

    @property
    def dim(self) -> int:
        return self.raw[1].shape[1]

    @classmethod
    def from_sequence(cls, vectors) -> DocVectors:
        vectors = np.asarray(vectors, dtype=np.float64)
        return cls(len(vectors), {1: vectors})

    @classmethod
    def from_matrix(cls, matrix: EmbeddingMatrix, doc_id: str, max_count: int | None = None) -> DocVectors:
        rows = matrix.rows_for(doc_id)
        if not rows:
            raise DataError(f"no embeddings for document {doc_id}")
        keys = [matrix.keys[r] for r in rows]
        n = max(k.first_index for k in keys if k.count == 1) + 1 if any(k.count == 1 for k in keys) else 0
        counts = sorted({k.count for k in keys if max_count is None or k.count <= max_count})
        out = {c: np.zeros((max(n - c + 1, 0), matrix.dim)) for c in counts}
        present = {c: np.zeros(max(n - c + 1, 0), dtype=bool) for c in counts}
        for r, k in zip(rows, keys):
            if k.count in out and k.first_index + k.count <= n:
                out[k.count][k.first_index] = matrix.vectors[r]
                present[k.count][k.first_index] = True
        if 1 not in out:
            raise DataError(f"document {doc_id} has no single-segment embeddings")
        return cls(n, out, present)


def downsample(vectors) -> np.ndarray:
    """Average every two consecutive rows; an odd tail is copied."""
    v = np.asarray(vectors, dtype=np.float64)
    n = len(v)
    if n == 0:
        raise DataError("cannot downsample an empty sequence")
    half = n // 2
    out = np.empty((n - half, v.shape[1]))
    out[:half] = (v[0:2 * half:2] + v[1:2 * half:2]) / 2
    if n % 2:
        out[half] = v[-1]
    return out


def draw_samples(src_unit: np.ndarray, tgt_unit: np.ndarray, size: int, rng: np.random.Generator):
    """Uniform samples without replacement from the non-zero rows of each side."""
    out = []
    for m in (src_unit, tgt_unit):
        pool = np.flatnonzero(np.any(m != 0, axis=1))
        k = min(size, len(pool))
        out.append(m[pool[rng.choice(len(pool), size=k, replace=False)]] if k else m[:0])
    return out[0], out[1]


def _moves(max_block: int) -> list[tuple[int, int]]:
    moves = [(1, 0), (0, 1)]
    moves += [(i, j) for i in range(1, max_block + 1) for j in range(1, max_block + 1)]
    # smaller blocks first, then the move advancing the source further
    return sorted(moves, key=lambda m: (m[0] + m[1], -m[0]))


def _full_window(n: int, m: int):
    return np.zeros(n + 1, dtype=np.int64), np.full(n + 1, m, dtype=np.int64)


def _deletion_cost(params: AlignParams, xs: np.ndarray, ys: np.ndarray, X: DocVectors, Y: DocVectors) -> float:
    if params.deletion_cost is not None:
        return float(params.deletion_cost)
    k = min(len(xs), len(ys))
    if k == 0:
        return 1.0
    x, y = xs[:k], ys[:k]
    num = 1.0 - np.clip(np.einsum("ij,ij->i", x, y), -1.0, 1.0)
    den = (1.0 - np.clip(x @ ys.T, -1.0, 1.0)).sum(axis=1) / (2 * len(ys))
    den += (1.0 - np.clip(y @ xs.T, -1.0, 1.0)).sum(axis=1) / (2 * len(xs))
    with np.errstate(divide="ignore", invalid="ignore"):
        costs = np.where(den > 0, num / den, np.inf)
    costs = costs[np.isfinite(costs)]
    if costs.size == 0:
        return 1.0
    return float(np.percentile(costs, params.deletion_percentile))


def _align_level(
    X: DocVectors,
    Y: DocVectors,
    params: AlignParams,
    level: int,
    max_block: int,
    window=None,
) -> AlignPath:
    n, m = X.n, Y.n
    rng = np.random.default_rng([params.seed, level])
    if n == 0 or m == 0:
        entries = [PathEntry((a, 1), None, 0.0, bool(X.zero[1][a])) for a in range(n)]
        entries += [PathEntry(None, (b, 1), 0.0, bool(Y.zero[1][b])) for b in range(m)]
        dc = params.deletion_cost if params.deletion_cost is not None else 1.0
        entries = [PathEntry(e.src, e.tgt, dc, e.blank) for e in entries]
        return AlignPath(entries, dc, 0)

    xs, ys = draw_samples(X.unit[1], Y.unit[1], params.sample_size, rng)
    del_cost = _deletion_cost(params, xs, ys, X, Y)

    moves = _moves(max_block)
    block_counts_x = {i for (i, j) in moves if i and j and i in X.unit}
    block_counts_y = {j for (i, j) in moves if i and j and j in Y.unit}
    moves = [mv for mv in moves if not (mv[0] and mv[1]) or (mv[0] in block_counts_x and mv[1] in block_counts_y)]
    h_prio = moves.index((0, 1))
    vertical = [(k, i, j) for k, (i, j) in enumerate(moves) if i > 0]

    can_align = len(xs) > 0 and len(ys) > 0
    if can_align:
        norm_x = {c: (1.0 - np.clip(X.unit[c] @ ys.T, -1.0, 1.0)).sum(axis=1) / (2 * len(ys)) for c in block_counts_x}
        norm_y = {c: (1.0 - np.clip(Y.unit[c] @ xs.T, -1.0, 1.0)).sum(axis=1) / (2 * len(xs)) for c in block_counts_y}

    lo, hi = window if window is not None else _full_window(n, m)
    if lo[0] != 0 or lo[n] > m or hi[n] < m:
        raise DataError("search window must contain both lattice corners")

    D: list[np.ndarray] = []
    back: list[np.ndarray] = []
    step: list[np.ndarray] = []
    cells = 0
    for a in range(n + 1):
        cols = np.arange(lo[a], hi[a] + 1)
        w = len(cols)
        cells += w
        best = np.full(w, np.inf)
        arg = np.full(w, -3, dtype=np.int64)
        sc = np.full(w, np.nan)
        for k, i, j in vertical:
            pa = a - i
            if pa < 0:
                continue
            bprev = cols - j
            ok = (bprev >= lo[pa]) & (bprev <= hi[pa])
            if j == 0:
                cost = np.full(w, del_cost)
            else:
                if not can_align or not X.present[i][pa]:
                    continue
                ok &= bprev >= 0
                ok[ok] = Y.present[j][bprev[ok]]
                if not ok.any():
                    continue
                idx = bprev[ok]
                cos = np.clip(Y.unit[j][idx] @ X.unit[i][pa], -1.0, 1.0)
                den = norm_x[i][pa] + norm_y[j][idx]
                with np.errstate(divide="ignore", invalid="ignore"):
                    c = np.where(den > 0, (1.0 - cos) * (i * j) / den, np.inf)
                # zero (blacklisted) vectors can only be deleted
                c[Y.zero[j][idx] | X.zero[i][pa]] = np.inf
                cost = np.full(w, np.inf)
                cost[ok] = c
            if not ok.any():
                continue
            prev = np.full(w, np.inf)
            prev[ok] = D[pa][bprev[ok] - lo[pa]]
            cand = prev + cost
            with np.errstate(invalid="ignore"):
                thr = np.where(np.isfinite(best), best - TIE_TOL * np.maximum(1.0, np.abs(best)), np.inf)
            better = cand < thr
            best[better] = cand[better]
            arg[better] = k
            sc[better] = cost[better]

        if a == 0:
            best[0], arg[0], sc[0] = 0.0, _START, 0.0
        # horizontal (target deletion) moves depend on the same row
        bl = best.tolist()
        al = arg.tolist()
        sl = sc.tolist()
        for t in range(1, w):
            h = bl[t - 1] + del_cost
            cur = bl[t]
            if cur == np.inf:
                take = h < np.inf
            else:
                tol = TIE_TOL * max(1.0, abs(cur))
                take = h < cur - tol or (h <= cur + tol and al[t] > h_prio)
            if take:
                bl[t], al[t], sl[t] = h, _HORIZONTAL, del_cost
        D.append(np.asarray(bl))
        back.append(np.asarray(al, dtype=np.int64))
        step.append(np.asarray(sl))

    if not np.isfinite(D[n][m - lo[n]]):
        raise DataError("no feasible path inside the search window")

    entries = []
    a, b = n, m
    while True:
        t = b - lo[a]
        k = int(back[a][t])
        if k == _START:
            break
        i, j = (0, 1) if k == _HORIZONTAL else moves[k]
        src = (a - i, i) if i else None
        tgt = (b - j, j) if j else None
        blank = bool((src and X.zero[i][src[0]]) or (tgt and Y.zero[j][tgt[0]]))
        entries.append(PathEntry(src, tgt, float(step[a][t]), blank))
        a, b = a - i, b - j
    entries.reverse()
    return AlignPath(entries, del_cost, cells)


def full_dp(src: DocVectors, tgt: DocVectors, params: AlignParams = AlignParams()) -> AlignPath:
    """Exhaustive DP over the whole lattice with blocks up to ``max_block``."""
    return _align_level(src, tgt, params, level=0, max_block=params.max_block)


def project_window(points: Sequence[tuple[int, int]], n: int, m: int, radius: int):
    """Per-row column bounds of the fine lattice around a coarse path.

    Coarse lattice point (p, q) covers fine points {2p, 2p+1} x {2q, 2q+1};
    the band is their Chebyshev dilation by ``radius``.
    """
    pts = np.asarray(points, dtype=np.int64)
    fine = np.concatenate([pts * 2 + np.array([dp, dq]) for dp in (0, 1) for dq in (0, 1)])
    fine[:, 0] = np.minimum(fine[:, 0], n)
    fine[:, 1] = np.minimum(fine[:, 1], m)
    fine = np.unique(fine, axis=0)
    lo = np.full(n + 1, m + 1, dtype=np.int64)
    hi = np.full(n + 1, -1, dtype=np.int64)
    for d in range(-radius, radius + 1):
        rows = fine[:, 0] + d
        ok = (rows >= 0) & (rows <= n)
        np.minimum.at(lo, rows[ok], fine[ok, 1] - radius)
        np.maximum.at(hi, rows[ok], fine[ok, 1] + radius)
    lo = np.clip(lo, 0, m)
    hi = np.clip(hi, 0, m)
    if (hi < lo).any():
        raise DataError("projected window leaves rows uncovered")
    return lo, hi


def recursive_align(src: DocVectors, tgt: DocVectors, params: AlignParams = AlignParams()) -> AlignPath:
    """Coarse-to-fine alignment with a band of ``window_radius`` at each level."""
    seqs = [(src.raw[1], tgt.raw[1])]
    while len(seqs[-1][0]) > params.base_case_size or len(seqs[-1][1]) > params.base_case_size:
        xs, ys = seqs[-1]
        seqs.append((downsample(xs) if len(xs) else xs, downsample(ys) if len(ys) else ys))
    if len(seqs) == 1:
        return full_dp(src, tgt, params)

    top = len(seqs) - 1
    X, Y = (DocVectors.from_sequence(s) for s in seqs[top])
    path = _align_level(X, Y, params, level=top, max_block=1)
    cells = path.cells_evaluated
    for level in range(top - 1, -1, -1):
        if level == 0:
            X, Y, mb = src, tgt, params.max_block
        else:
            X, Y = (DocVectors.from_sequence(s) for s in seqs[level])
            mb = 1
        window = project_window(path.lattice_points(), X.n, Y.n, params.window_radius)
        path = _align_level(X, Y, params, level=level, max_block=mb, window=window)
        cells += path.cells_evaluated
    path.cells_evaluated = cells
    path.levels = len(seqs)
    return path
