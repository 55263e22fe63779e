"""Domain types and on-disk formats shared by every stage.

File formats (all text files are UTF-8, tab separated, no header):

* segments manifest: ``doc_id  index  start_sec  end_sec``
* pairs manifest: ``src_doc_id  tgt_doc_id``
* embeddings: binary ``SVEC`` file plus a sidecar TSV
  ``row  doc_id  first_index  count  start_sec  end_sec``
* alignments: ``src_doc src_first src_count tgt_doc tgt_first tgt_count cost margin flags``
  with an empty side written as ``-  0  0`` and missing numbers as ``NA``.
"""

from __future__ import annotations

import math
import struct
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SVEC"
FORMAT_VERSION = 1
FLAGS = ("concatenated", "deleted", "identical")

_HEADER = struct.Struct("<4sIII")


class DataError(Exception):
    """Raised when an input file or in-memory object violates its contract."""


class FormatError(DataError):
    def __init__(self, path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True, order=True)
class Segment:
    doc_id: str
    index: int
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def midpoint(self) -> float:
        return (self.start + self.end) / 2


@dataclass(frozen=True, order=True)
class OverlapSegment:
    """``count`` consecutive segments starting at ``first_index``."""

    doc_id: str
    first_index: int
    count: int
    start: float
    end: float

    @property
    def last_index(self) -> int:
        return self.first_index + self.count - 1

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.doc_id, self.first_index, self.count)


@dataclass(frozen=True, order=True)
class Span:
    doc_id: str
    first: int
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise DataError(f"span count must be >= 1, got {self.count}")
        if self.first < 0:
            raise DataError(f"span first index must be >= 0, got {self.first}")

    @property
    def last(self) -> int:
        return self.first + self.count - 1

    def overlaps(self, other: Span) -> bool:
        return (
            self.doc_id == other.doc_id
            and self.first <= other.last
            and other.first <= self.last
        )

    def indices(self) -> range:
        return range(self.first, self.first + self.count)


@dataclass(frozen=True)
class Alignment:
    src: Span | None
    tgt: Span | None
    cost: float | None = None
    margin: float | None = None
    flags: frozenset[str] = frozenset()
    # constituents of a concatenated alignment; in-memory only
    parts: tuple[Alignment, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.src is None and self.tgt is None:
            raise DataError("alignment needs at least one side")
        unknown = set(self.flags) - set(FLAGS)
        if unknown:
            raise DataError(f"unknown alignment flags {sorted(unknown)}")
        if not isinstance(self.flags, frozenset):
            object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def is_deletion(self) -> bool:
        return self.src is None or self.tgt is None

    def sort_key(self):
        def side(s):
            return ("", -1, 0) if s is None else (s.doc_id, s.first, s.count)

        return (side(self.src), side(self.tgt))


@dataclass(frozen=True)
class DocumentPair:
    src_doc_id: str
    tgt_doc_id: str


# --------------------------------------------------------------------------
# segments manifest


def _parse_float(text: str, path, lineno: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FormatError(path, lineno, f"bad {what} {text!r}") from None
    if not math.isfinite(value):
        raise FormatError(path, lineno, f"non-finite {what} {text!r}")
    return value


def _parse_int(text: str, path, lineno: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise FormatError(path, lineno, f"bad {what} {text!r}") from None


def _split(line: str, n: int, path, lineno: int) -> list[str]:
    fields = line.rstrip("\n").rstrip("\r").split("\t")
    if len(fields) != n:
        raise FormatError(path, lineno, f"expected {n} tab-separated fields, got {len(fields)}")
    return fields


def _lines(path):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                yield lineno, line


def validate_segments(segments: Sequence[Segment], *, path="<segments>") -> None:
    for pos, seg in enumerate(segments):
        if seg.index != pos:
            raise FormatError(path, None, f"{seg.doc_id}: expected index {pos}, got {seg.index}")
        if seg.start < 0:
            raise FormatError(path, None, f"{seg.doc_id}#{seg.index}: negative start")
        if seg.end <= seg.start:
            raise FormatError(path, None, f"{seg.doc_id}#{seg.index}: end <= start")
        if pos and seg.start <= segments[pos - 1].start:
            raise FormatError(path, None, f"{seg.doc_id}#{seg.index}: start not increasing")


def read_segments(path) -> dict[str, list[Segment]]:
    docs: dict[str, list[Segment]] = {}
    for lineno, line in _lines(path):
        doc_id, idx, start, end = _split(line, 4, path, lineno)
        index = _parse_int(idx, path, lineno, "index")
        s = _parse_float(start, path, lineno, "start")
        e = _parse_float(end, path, lineno, "end")
        segs = docs.setdefault(doc_id, [])
        if index != len(segs):
            raise FormatError(path, lineno, f"{doc_id}: expected index {len(segs)}, got {index}")
        if s < 0:
            raise FormatError(path, lineno, "negative start")
        if e <= s:
            raise FormatError(path, lineno, f"end {e} <= start {s}")
        if segs and s <= segs[-1].start:
            raise FormatError(path, lineno, f"start {s} not increasing")
        segs.append(Segment(doc_id, index, s, e))
    return docs


def write_segments(path, docs: Mapping[str, Sequence[Segment]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc_id in sorted(docs):
            for seg in docs[doc_id]:
                f.write(f"{doc_id}\t{seg.index}\t{seg.start!r}\t{seg.end!r}\n")


# --------------------------------------------------------------------------
# pairs manifest


def read_pairs(path) -> list[DocumentPair]:
    pairs = []
    seen = set()
    for lineno, line in _lines(path):
        src, tgt = _split(line, 2, path, lineno)
        if (src, tgt) in seen:
            raise FormatError(path, lineno, f"duplicate pair {src} {tgt}")
        seen.add((src, tgt))
        pairs.append(DocumentPair(src, tgt))
    return pairs


def write_pairs(path, pairs: Iterable[DocumentPair]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(f"{p.src_doc_id}\t{p.tgt_doc_id}\n")


# --------------------------------------------------------------------------
# embeddings


class EmbeddingMatrix:
    """Rows of real vectors, one per :class:`OverlapSegment`.

    Rows are stored as float32 exactly as read from disk. ``lookup`` and
    ``doc_vectors`` hand out float64 copies for arithmetic.
    """

    def __init__(self, vectors: np.ndarray, keys: Sequence[OverlapSegment]):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise DataError("embedding matrix must be 2-D")
        if vectors.shape[1] < 1:
            raise DataError("embedding dim must be > 0")
        if len(keys) != vectors.shape[0]:
            raise DataError(f"{len(keys)} keys for {vectors.shape[0]} rows")
        if not np.isfinite(vectors).all():
            bad = int(np.flatnonzero(~np.isfinite(vectors).all(axis=1))[0])
            raise DataError(f"non-finite values in row {bad} ({keys[bad].key})")
        self.vectors = vectors
        self.keys = list(keys)
        self._doc_rows: dict[str, list[int]] | None = None
        self.key_index: dict[tuple[str, int, int], int] = {}
        for row, k in enumerate(self.keys):
            if k.key in self.key_index:
                raise DataError(f"duplicate overlap key {k.key}")
            self.key_index[k.key] = row

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def doc_ids(self) -> list[str]:
        return sorted({k.doc_id for k in self.keys})

    def lookup(self, doc_id: str, first: int, count: int) -> np.ndarray | None:
        row = self.key_index.get((doc_id, first, count))
        if row is None:
            return None
        return self.vectors[row].astype(np.float64)

    def rows_for(self, doc_id: str) -> list[int]:
        if self._doc_rows is None:
            self._doc_rows = {}
            for r, k in enumerate(self.keys):
                self._doc_rows.setdefault(k.doc_id, []).append(r)
        return list(self._doc_rows.get(doc_id, ()))

    def subset(self, rows: Sequence[int]) -> EmbeddingMatrix:
        rows = list(rows)
        return EmbeddingMatrix(self.vectors[rows], [self.keys[r] for r in rows])


def read_embeddings(path, sidecar=None) -> EmbeddingMatrix:
    """Read ``path`` and its sidecar (default ``<path>.tsv``)."""
    path = Path(path)
    sidecar = Path(sidecar) if sidecar is not None else Path(str(path) + ".tsv")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(path, None, "truncated header")
    magic, version, dim, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(path, None, f"magic mismatch {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(path, None, f"unsupported version {version}")
    if dim < 1:
        raise FormatError(path, None, "dim must be > 0")
    payload = data[_HEADER.size:]
    expected = dim * count * 4
    if len(payload) < expected:
        raise FormatError(path, None, "truncated payload")
    if len(payload) > expected:
        raise FormatError(path, None, "trailing bytes after payload")
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float32)
    finite = np.isfinite(vectors).all(axis=1)
    if not finite.all():
        raise FormatError(path, None, f"non-finite values in row {int(np.flatnonzero(~finite)[0])}")
    keys = read_sidecar(sidecar)
    if len(keys) != count:
        raise FormatError(sidecar, None, f"{len(keys)} sidecar rows for {count} vectors")
    return EmbeddingMatrix(vectors, keys)


def read_sidecar(path) -> list[OverlapSegment]:
    keys = []
    for lineno, line in _lines(path):
        row, doc_id, first, count, start, end = _split(line, 6, path, lineno)
        if _parse_int(row, path, lineno, "row") != len(keys):
            raise FormatError(path, lineno, f"expected row {len(keys)}")
        c = _parse_int(count, path, lineno, "count")
        if c < 1:
            raise FormatError(path, lineno, "count must be >= 1")
        keys.append(OverlapSegment(
            doc_id,
            _parse_int(first, path, lineno, "first_index"),
            c,
            _parse_float(start, path, lineno, "start"),
            _parse_float(end, path, lineno, "end"),
        ))
    return keys


def write_sidecar(path, keys: Iterable[OverlapSegment]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row, k in enumerate(keys):
            f.write(f"{row}\t{k.doc_id}\t{k.first_index}\t{k.count}\t{k.start!r}\t{k.end!r}\n")


def write_embeddings(path, matrix: EmbeddingMatrix, sidecar=None) -> None:
    path = Path(path)
    sidecar = Path(sidecar) if sidecar is not None else Path(str(path) + ".tsv")
    count, dim = matrix.vectors.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, dim, count))
        f.write(np.ascontiguousarray(matrix.vectors, dtype="<f4").tobytes())
    write_sidecar(sidecar, matrix.keys)


# --------------------------------------------------------------------------
# alignments

_NA = "NA"


def _fmt_num(x: float | None) -> str:
    return _NA if x is None else repr(float(x))


def _fmt_side(s: Span | None) -> str:
    return "-\t0\t0" if s is None else f"{s.doc_id}\t{s.first}\t{s.count}"


def format_alignment(a: Alignment) -> str:
    flags = ",".join(sorted(a.flags)) or "-"
    return f"{_fmt_side(a.src)}\t{_fmt_side(a.tgt)}\t{_fmt_num(a.cost)}\t{_fmt_num(a.margin)}\t{flags}"


def write_alignments(path, alignments: Iterable[Alignment]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for a in alignments:
            f.write(format_alignment(a) + "\n")


def read_alignments(path) -> list[Alignment]:
    out = []
    for lineno, line in _lines(path):
        f = _split(line, 9, path, lineno)

        def side(doc, first, count):
            c = _parse_int(count, path, lineno, "count")
            if c == 0:
                return None
            return Span(doc, _parse_int(first, path, lineno, "first"), c)

        def num(text, what):
            return None if text == _NA else _parse_float(text, path, lineno, what)

        try:
            out.append(Alignment(
                side(*f[0:3]),
                side(*f[3:6]),
                num(f[6], "cost"),
                num(f[7], "margin"),
                frozenset() if f[8] == "-" else frozenset(f[8].split(",")),
            ))
        except DataError as exc:
            raise FormatError(path, lineno, str(exc)) from None
    return out


# --------------------------------------------------------------------------
# helpers over segment maps


def span_times(segments: Mapping[str, Sequence[Segment]], span: Span) -> tuple[float, float]:
    try:
        segs = segments[span.doc_id]
        return segs[span.first].start, segs[span.last].end
    except (KeyError, IndexError):
        raise DataError(f"span {span} not found in segment manifest") from None


def span_duration(segments: Mapping[str, Sequence[Segment]], span: Span) -> float:
    s, e = span_times(segments, span)
    return e - s
