"""Per-pair orchestration shared by the CLI and the tests.

Work is split by document pair and mapped over a thread pool; results are
collected in input order, so the worker count never changes the output.
"""

from __future__ import annotations

import logging
import os
import threading
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Alignment, DataError, DocumentPair, EmbeddingMatrix, FormatError, Segment, Span, span_times
from .fbank import FbankConfig, IdenticalPair, compute_fbank, cut, detect_identical, find_identical_candidates, read_wav
from .vecalign import AlignParams, DocVectors, check_path, recursive_align

logger = logging.getLogger(__name__)

THREADS_ENV = "SVALIGN_THREADS"

Segments = Mapping[str, Sequence[Segment]]


def resolve_threads(threads: int | None) -> int:
    """Explicit count, else the environment override, else 1."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise DataError(f"{THREADS_ENV}={env!r} is not an integer") from None
        else:
            threads = 1
    if threads < 1:
        raise DataError(f"thread count must be >= 1, got {threads}")
    return threads


def map_ordered(fn: Callable, items: Iterable, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class AudioStore:
    """Document audio looked up as ``<directory>/<doc_id>.wav`` or from memory.

    Arrays are int16 or float samples; int16 is scaled to [-1, 1).
    """

    def __init__(self, directory: str | Path | None = None, arrays: Mapping[str, np.ndarray] | None = None,
                 fbank_config: FbankConfig = FbankConfig()):
        self.directory = Path(directory) if directory is not None else None
        self.arrays = dict(arrays or {})
        self.config = fbank_config
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def samples(self, doc_id: str) -> np.ndarray:
        with self._lock:
            if doc_id in self._cache:
                return self._cache[doc_id]
        if doc_id in self.arrays:
            x = np.asarray(self.arrays[doc_id])
            x = x / 32768.0 if x.dtype == np.int16 else x.astype(np.float64)
        elif self.directory is not None:
            path = self.directory / f"{doc_id}.wav"
            if not path.exists():
                raise DataError(f"missing audio for document {doc_id}: {path}")
            x, rate = read_wav(path)
            if rate != self.config.sample_rate:
                raise DataError(f"{path}: expected {self.config.sample_rate} Hz, got {rate} Hz")
        else:
            raise DataError(f"missing audio for document {doc_id}")
        with self._lock:
            self._cache[doc_id] = x
        return x

    def fbank(self, doc_id: str, start: float, end: float) -> np.ndarray:
        x = self.samples(doc_id)
        try:
            return compute_fbank(cut(x, start, end, self.config.sample_rate), self.config)
        except DataError as exc:
            raise DataError(f"document {doc_id} [{start}, {end}]: {exc}") from None

    def span_fbank(self, segments: Segments, span: Span) -> np.ndarray:
        start, end = span_times(segments, span)
        return self.fbank(span.doc_id, start, end)


@dataclass(frozen=True)
class Detection:
    pair: DocumentPair
    hit: IdenticalPair


def detect_pairs(
    pairs: Sequence[DocumentPair],
    src_segments: Segments,
    tgt_segments: Segments,
    audio: AudioStore,
    dur_thresh: float = 0.1,
    sim_thresh: float = 5.0,
    threads: int = 1,
) -> list[Detection]:
    """Identical-segment detection for every pair, in pair order."""
    def one(p: DocumentPair) -> list[Detection]:
        ss = _segments_of(src_segments, p.src_doc_id, "source")
        ts = _segments_of(tgt_segments, p.tgt_doc_id, "target")
        cands = find_identical_candidates(ss, ts)
        hits = detect_identical(
            cands, ss, ts,
            lambda i: audio.fbank(p.src_doc_id, ss[i].start, ss[i].end),
            lambda j: audio.fbank(p.tgt_doc_id, ts[j].start, ts[j].end),
            dur_thresh, sim_thresh,
        )
        logger.info("%s/%s: %d candidates, %d identical", p.src_doc_id, p.tgt_doc_id, len(cands), len(hits))
        return [Detection(p, h) for h in hits]

    return [d for ds in map_ordered(one, pairs, threads) for d in ds]


def blacklists(detections: Iterable[Detection]) -> tuple[dict[str, set[int]], dict[str, set[int]]]:
    src: dict[str, set[int]] = {}
    tgt: dict[str, set[int]] = {}
    for d in detections:
        src.setdefault(d.pair.src_doc_id, set()).add(d.hit.src_index)
        tgt.setdefault(d.pair.tgt_doc_id, set()).add(d.hit.tgt_index)
    return src, tgt


def _segments_of(segments: Segments, doc_id: str, side: str) -> Sequence[Segment]:
    try:
        return segments[doc_id]
    except KeyError:
        raise DataError(f"{side} document {doc_id} is not in the segment manifest") from None


def align_pair(pair: DocumentPair, src: EmbeddingMatrix, tgt: EmbeddingMatrix,
               params: AlignParams = AlignParams(), max_count: int | None = None) -> list[Alignment]:
    X = DocVectors.from_matrix(src, pair.src_doc_id, max_count)
    Y = DocVectors.from_matrix(tgt, pair.tgt_doc_id, max_count)
    path = recursive_align(X, Y, params)
    check_path(path, X.n, Y.n)
    logger.info("%s/%s: %dx%d, %d levels, %d cells, deletion cost %.4f",
                pair.src_doc_id, pair.tgt_doc_id, X.n, Y.n, path.levels, path.cells_evaluated, path.deletion_cost)
    return path.to_alignments(pair.src_doc_id, pair.tgt_doc_id)


def align_pairs(pairs: Sequence[DocumentPair], src: EmbeddingMatrix, tgt: EmbeddingMatrix,
                params: AlignParams = AlignParams(), max_count: int | None = None,
                threads: int = 1) -> list[Alignment]:
    """Align every pair; output is grouped by pair in input order, each path in order."""
    results = map_ordered(lambda p: align_pair(p, src, tgt, params, max_count), pairs, threads)
    return [a for r in results for a in r]


def write_detections(path, detections: Iterable[Detection]) -> None:
    """``src_doc|tgt_doc  src_index  tgt_index  dur_diff  fbank_sim`` per line."""
    with open(path, "w", encoding="utf-8") as f:
        for d in detections:
            for doc in (d.pair.src_doc_id, d.pair.tgt_doc_id):
                if "|" in doc:
                    raise DataError(f"document id {doc!r} contains '|'")
            h = d.hit
            f.write(f"{d.pair.src_doc_id}|{d.pair.tgt_doc_id}\t{h.src_index}\t{h.tgt_index}\t"
                    f"{h.duration_diff!r}\t{h.fbank_sim!r}\n")


def read_detections(path) -> list[Detection]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            try:
                if len(fields) != 5:
                    raise ValueError(f"expected 5 fields, got {len(fields)}")
                src, sep, tgt = fields[0].partition("|")
                if not sep or not src or not tgt:
                    raise ValueError(f"bad document pair {fields[0]!r}")
                hit = IdenticalPair(int(fields[1]), int(fields[2]), float(fields[3]), float(fields[4]))
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
            out.append(Detection(DocumentPair(src, tgt), hit))
    return out
