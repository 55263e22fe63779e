"""Margin-based mining over bags of embeddings with exact nearest neighbours."""

from __future__ import annotations

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Alignment, DataError, DocumentPair, EmbeddingMatrix, Span
from .vecalign import _unit

_CHUNK = 2048


@dataclass(frozen=True)
class Bag:
    """Embeddings of one language side; ``origins[r]`` names row ``r``'s span."""

    vectors: np.ndarray
    origins: tuple[Span, ...]

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise DataError("bag vectors must be 2-D")
        if len(self.origins) != len(v):
            raise DataError("one origin per bag row required")
        if len(set(self.origins)) != len(self.origins):
            raise DataError("bag origins must be unique")
        if not np.isfinite(v).all():
            raise DataError("bag rows must be finite")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "unit", _unit(v))

    def __len__(self) -> int:
        return len(self.origins)

    @classmethod
    def from_matrix(cls, matrix: EmbeddingMatrix, doc_ids: Sequence[str] | None = None) -> Bag:
        """Rows of ``matrix`` (optionally restricted to ``doc_ids``), zero rows dropped."""
        if doc_ids is None:
            rows = range(len(matrix))
        else:
            rows = [r for d in doc_ids for r in matrix.rows_for(d)]
        rows = [r for r in rows if np.any(matrix.vectors[r] != 0)]
        keys = [matrix.keys[r] for r in rows]
        return cls(
            matrix.vectors[rows].astype(np.float64).reshape(len(rows), matrix.dim),
            tuple(Span(k.doc_id, k.first_index, k.count) for k in keys),
        )


@dataclass(frozen=True, order=True)
class MinedPair:
    src_row: int
    tgt_row: int
    score: float


def _check_dims(a: np.ndarray, bag: Bag):
    if a.shape[-1] != bag.vectors.shape[1]:
        raise DataError(f"dim mismatch: {a.shape[-1]} vs {bag.vectors.shape[1]}")


def knn(query, bag: Bag, k: int) -> list[tuple[int, float]]:
    """Exact top-k rows of ``bag`` by cosine, best first; ties go to the lower row."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(bag) == 0:
        raise DataError("empty bag")
    q = _unit(np.asarray(query, dtype=np.float64))
    _check_dims(q, bag)
    sims = bag.unit @ q
    order = np.lexsort((np.arange(len(sims)), -sims))[:k]
    return [(int(r), float(sims[r])) for r in order]


def neighbor_means(queries: np.ndarray, base: np.ndarray, k: int) -> np.ndarray:
    """Mean cosine of each unit query row to its k nearest unit rows of ``base``."""
    if len(base) == 0:
        raise DataError("empty bag")
    k = min(k, len(base))
    out = np.empty(len(queries))
    for s in range(0, len(queries), _CHUNK):
        sims = queries[s:s + _CHUNK] @ base.T
        top = np.partition(sims, sims.shape[1] - k, axis=1)[:, -k:]
        out[s:s + _CHUNK] = np.sort(top, axis=1).sum(axis=1) / k
    return out


def margin_score(a, b, nn_a: Sequence[float], nn_b: Sequence[float], k: int | None = None) -> float:
    """Cosine of ``a`` and ``b`` divided by the mean neighbourhood cosine of each.

    ``nn_a`` are cosines of ``a`` to its nearest neighbours in ``b``'s language
    (best first) and vice versa. A zero denominator gives ``-inf``.
    """
    nn_a = list(nn_a)[:k] if k else list(nn_a)
    nn_b = list(nn_b)[:k] if k else list(nn_b)
    if not nn_a or not nn_b:
        raise DataError("neighbour lists must be non-empty")
    ua, ub = _unit(np.asarray(a, dtype=np.float64)), _unit(np.asarray(b, dtype=np.float64))
    if ua.shape != ub.shape:
        raise DataError(f"dim mismatch {ua.shape} vs {ub.shape}")
    cos = float(ua @ ub)
    den = sum(nn_a) / (2 * len(nn_a)) + sum(nn_b) / (2 * len(nn_b))
    if den == 0:
        return float("-inf")
    return cos / den


def _margins(cos: np.ndarray, r_rows: np.ndarray, r_cols: np.ndarray) -> np.ndarray:
    den = (r_rows[:, None] + r_cols[None, :]) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den != 0, cos / den, -np.inf)


def _best(queries: np.ndarray, r_q: np.ndarray, other: Bag, r_other: np.ndarray) -> np.ndarray:
    out = np.empty(len(queries), dtype=np.int64)
    for s in range(0, len(queries), _CHUNK):
        m = _margins(queries[s:s + _CHUNK] @ other.unit.T, r_q[s:s + _CHUNK], r_other)
        out[s:s + _CHUNK] = m.argmax(axis=1)
    return out


def mine(a, U: Bag, V: Bag, k: int = 4) -> int:
    """Row of ``V`` with the highest margin score against ``a`` (a vector in U's language)."""
    if len(V) == 0 or len(U) == 0:
        raise DataError("empty bag")
    q = _unit(np.asarray(a, dtype=np.float64))[None, :]
    _check_dims(q, V)
    r_q = neighbor_means(q, V.unit, k)
    r_v = neighbor_means(V.unit, U.unit, k)
    return int(_best(q, r_q, V, r_v)[0])


def align_bags(U: Bag, V: Bag, k: int = 4) -> list[MinedPair]:
    """Forward and backward mining, deduplicated, best score first."""
    if len(U) == 0 or len(V) == 0:
        raise DataError("empty bag")
    if U.vectors.shape[1] != V.vectors.shape[1]:
        raise DataError("dim mismatch between bags")
    r_u = neighbor_means(U.unit, V.unit, k)
    r_v = neighbor_means(V.unit, U.unit, k)
    fwd = _best(U.unit, r_u, V, r_v)
    bwd = _best(V.unit, r_v, U, r_u)
    pairs = {(u, int(v)) for u, v in enumerate(fwd)} | {(int(u), v) for v, u in enumerate(bwd)}
    us = np.array([p[0] for p in pairs], dtype=np.int64)
    vs = np.array([p[1] for p in pairs], dtype=np.int64)
    cos = np.einsum("ij,ij->i", U.unit[us], V.unit[vs])
    den = (r_u[us] + r_v[vs]) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(den != 0, cos / den, -np.inf)
    out = [MinedPair(int(u), int(v), float(s)) for u, v, s in zip(us, vs, scores)]
    out.sort(key=lambda p: (-p.score, p.src_row, p.tgt_row))
    return out


def _to_alignments(pairs: Sequence[MinedPair], U: Bag, V: Bag) -> list[Alignment]:
    return [Alignment(U.origins[p.src_row], V.origins[p.tgt_row], margin=p.score) for p in pairs]


def sort_mined(alignments: list[Alignment]) -> list[Alignment]:
    return sorted(alignments, key=lambda a: (-a.margin, a.sort_key()))


def global_mine(src: EmbeddingMatrix, tgt: EmbeddingMatrix, k: int = 4,
                src_docs: Sequence[str] | None = None, tgt_docs: Sequence[str] | None = None) -> list[Alignment]:
    """Mine across every source and target document at once."""
    U = Bag.from_matrix(src, src_docs)
    V = Bag.from_matrix(tgt, tgt_docs)
    if len(U) == 0 or len(V) == 0:
        raise DataError("empty bag")
    return sort_mined(_to_alignments(align_bags(U, V, k), U, V))


def local_mine(pairs: Sequence[DocumentPair], src: EmbeddingMatrix, tgt: EmbeddingMatrix,
               k: int = 4, threads: int = 1) -> list[Alignment]:
    """Mine each document pair separately and take the union."""
    for p in pairs:
        if not src.rows_for(p.src_doc_id):
            raise DataError(f"no source embeddings for document {p.src_doc_id}")
        if not tgt.rows_for(p.tgt_doc_id):
            raise DataError(f"no target embeddings for document {p.tgt_doc_id}")

    def one(p: DocumentPair) -> list[Alignment]:
        U = Bag.from_matrix(src, [p.src_doc_id])
        V = Bag.from_matrix(tgt, [p.tgt_doc_id])
        if len(U) == 0 or len(V) == 0:
            return []
        return _to_alignments(align_bags(U, V, k), U, V)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one, pairs))
    return sort_mined([a for r in results for a in r])
