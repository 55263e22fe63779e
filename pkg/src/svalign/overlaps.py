"""Progressive concatenation of consecutive segments."""

from __future__ import annotations

from collections.abc import Callable, Collection, Sequence
from dataclasses import dataclass

import numpy as np

from .data import DataError, EmbeddingMatrix, OverlapSegment, Segment


@dataclass(frozen=True)
class OverlapConfig:
    max_count: int = 5
    max_duration: float = 20.0

    def __post_init__(self):
        if self.max_count < 1:
            raise ValueError("max_count must be >= 1")
        if self.max_duration <= 0:
            raise ValueError("max_duration must be > 0")


def build_overlaps(segments: Sequence[Segment], config: OverlapConfig = OverlapConfig()) -> list[OverlapSegment]:
    """Enumerate (first, count) concatenations, sorted by (first, count).

    The span duration includes the gaps between segments. A single segment is
    always emitted, even when it alone exceeds ``max_duration``.
    """
    out = []
    n = len(segments)
    for a in range(n):
        start = segments[a].start
        for count in range(1, config.max_count + 1):
            last = a + count - 1
            if last >= n:
                break
            end = segments[last].end
            if count > 1 and end - start > config.max_duration:
                break
            out.append(OverlapSegment(segments[a].doc_id, a, count, start, end))
    return out


def zero_mask(overlaps: Sequence[OverlapSegment], blacklist: Collection[int]) -> np.ndarray:
    """True where an overlap's span contains a blacklisted segment index."""
    bad = np.array(sorted(set(blacklist)), dtype=np.int64)
    mask = np.zeros(len(overlaps), dtype=bool)
    if bad.size == 0:
        return mask
    for row, o in enumerate(overlaps):
        # first blacklisted index >= first_index
        pos = np.searchsorted(bad, o.first_index)
        mask[row] = pos < bad.size and bad[pos] <= o.last_index
    return mask


def assemble_embeddings(
    overlaps: Sequence[OverlapSegment],
    provider: Callable[[OverlapSegment], np.ndarray | None],
    blacklist: Collection[int] = (),
    dim: int | None = None,
) -> EmbeddingMatrix:
    """Collect one row per overlap; overlaps touching ``blacklist`` get zero rows.

    ``provider`` is not called for blacklisted overlaps.
    """
    mask = zero_mask(overlaps, blacklist)
    rows: list[np.ndarray | None] = []
    for o, is_zero in zip(overlaps, mask):
        if is_zero:
            rows.append(None)
            continue
        try:
            v = provider(o)
        except KeyError:
            v = None
        if v is None:
            raise DataError(f"no embedding for overlap {o.doc_id} first={o.first_index} count={o.count}")
        v = np.asarray(v, dtype=np.float64).ravel()
        if dim is None:
            dim = v.size
        elif v.size != dim:
            raise DataError(f"overlap {o.key}: dim {v.size} != {dim}")
        rows.append(v)
    if dim is None:
        raise DataError("cannot infer embedding dim: every overlap is blacklisted")
    matrix = np.zeros((len(overlaps), dim), dtype=np.float32)
    for r, v in enumerate(rows):
        if v is not None:
            matrix[r] = v
    return EmbeddingMatrix(matrix, overlaps)


def blacklist_matrix(matrix: EmbeddingMatrix, blacklist: dict[str, Collection[int]]) -> EmbeddingMatrix:
    """Copy of ``matrix`` with rows touching blacklisted segments zeroed."""
    if not any(blacklist.values()):
        return matrix
    vectors = matrix.vectors.copy()
    for doc_id, indices in blacklist.items():
        rows = matrix.rows_for(doc_id)
        if not rows:
            continue
        mask = zero_mask([matrix.keys[r] for r in rows], indices)
        vectors[np.asarray(rows)[mask]] = 0.0
    return EmbeddingMatrix(vectors, matrix.keys)
