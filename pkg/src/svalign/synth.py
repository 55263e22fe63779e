"""Synthetic parallel speech corpora with known alignments.

Each document pair is a sequence of blocks (1-1, 2-1, 1-2, source deletion,
target deletion). A block draws one latent unit vector; every segment of the
block embeds as ``normalize(latent + sigma * noise)``. Optional extras:

* identical blocks: the target segment is the same recording as the source
  (same waveform, same embedding), padded by at most ``max_pad`` seconds;
  the gold alignment deletes both.
* cross duplicates: an extra source segment whose embedding copies the
  latent of a target segment in another pair; gold deletes it, and a
  language-level miner is expected to pair it with that target.

Timestamps are whole milliseconds, so every duration is exact in the
manifests and in the audio.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .data import Alignment, DataError, DocumentPair, EmbeddingMatrix, Segment, Span
from .overlaps import OverlapConfig, build_overlaps
from .vecalign import _unit, cosine

logger = logging.getLogger(__name__)

BLOCK_KINDS = ("1-1", "2-1", "1-2", "src-del", "tgt-del")
_SHAPES = {"1-1": (1, 1), "2-1": (2, 1), "1-2": (1, 2), "src-del": (1, 0), "tgt-del": (0, 1), "identical": (1, 1)}


@dataclass(frozen=True)
class SynthConfig:
    n_pairs: int = 10
    segs_per_doc: tuple[int, int] = (40, 60)
    dim: int = 64
    noise_sigma: float = 0.05
    block_mix: tuple[float, ...] = (0.8, 0.05, 0.05, 0.05, 0.05)
    identical_rate: float = 0.0
    cross_dup_rate: float = 0.0
    seed: int = 0
    with_audio: bool = False
    sample_rate: int = 16000
    min_duration: float = 1.0
    max_duration: float = 8.0
    max_pad: float = 0.05
    overlaps: OverlapConfig = OverlapConfig()

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")
        lo, hi = self.segs_per_doc
        if not 1 <= lo <= hi:
            raise ValueError(f"bad segs_per_doc range {self.segs_per_doc}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        mix = np.asarray(self.block_mix, dtype=np.float64)
        if mix.shape != (len(BLOCK_KINDS),) or (mix < 0).any() or not math.isclose(mix.sum(), 1.0, abs_tol=1e-9):
            raise ValueError(f"block_mix needs {len(BLOCK_KINDS)} non-negative probabilities summing to 1")
        if mix[0] + mix[2] + mix[3] == 0:
            # a document with one remaining source segment could never be completed
            raise ValueError("block_mix needs a block with exactly one source segment")
        for name in ("identical_rate", "cross_dup_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.cross_dup_rate > 0 and self.n_pairs < 2:
            raise ValueError("cross duplicates need at least two pairs")
        if not 0 < self.min_duration <= self.max_duration:
            raise ValueError("bad duration range")
        if self.max_pad < 0:
            raise ValueError("max_pad must be >= 0")
        if self.with_audio and self.sample_rate % 1000:
            raise ValueError("sample_rate must be a multiple of 1000")


@dataclass(frozen=True)
class PlantedIdentical:
    src_doc: str
    src_index: int
    tgt_doc: str
    tgt_index: int
    lead_pad: float
    trail_pad: float


@dataclass(frozen=True)
class CrossDuplicate:
    # the extra source segment
    src_doc: str
    src_index: int
    # the target segment whose content it copies
    tgt_doc: str
    tgt_index: int


@dataclass
class GoldCorpus:
    config: SynthConfig
    src_segments: dict[str, list[Segment]]
    tgt_segments: dict[str, list[Segment]]
    pairs: list[DocumentPair]
    src_embeddings: EmbeddingMatrix
    tgt_embeddings: EmbeddingMatrix
    gold: list[Alignment]
    identical: list[PlantedIdentical]
    cross_dups: list[CrossDuplicate]
    mean_true_cosine: float
    # doc id -> int16 samples
    audio: dict[str, np.ndarray] | None = None
    log: list[dict] = field(default_factory=list)

    def gold_for(self, pair: DocumentPair) -> list[Alignment]:
        return [a for a in self.gold
                if (a.src is not None and a.src.doc_id == pair.src_doc_id)
                or (a.tgt is not None and a.tgt.doc_id == pair.tgt_doc_id)]


@dataclass(frozen=True)
class ExpectedDetections:
    # (src_doc, src_index, tgt_doc, tgt_index)
    identical: frozenset[tuple[str, int, str, int]]
    # (source span, target span) pairs a language-level miner must return
    out_of_pair: frozenset[tuple[Span, Span]]


def sigma_for_cosine(target: float, dim: int) -> float:
    """Noise level whose expected cosine between two noisy copies of a latent is about ``target``."""
    if not 0 < target <= 1:
        raise ValueError("target cosine must be in (0, 1]")
    return math.sqrt((1.0 / target - 1.0) / dim)


@dataclass
class _Block:
    kind: str
    latent: np.ndarray
    src_vecs: list[np.ndarray] = field(default_factory=list)
    tgt_vecs: list[np.ndarray] = field(default_factory=list)
    src_idx: list[int] = field(default_factory=list)
    tgt_idx: list[int] = field(default_factory=list)
    twin: _Block | None = None  # block whose target a cross duplicate copies


def _draw_blocks(cfg: SynthConfig, rng: np.random.Generator) -> list[str]:
    mix = np.asarray(cfg.block_mix, dtype=np.float64)
    n_src = int(rng.integers(cfg.segs_per_doc[0], cfg.segs_per_doc[1] + 1))
    kinds: list[str] = []
    used = 0
    while used < n_src:
        remaining = n_src - used
        p = mix.copy()
        if remaining < 2:
            p[1] = 0.0
        p /= p.sum()
        kind = BLOCK_KINDS[int(rng.choice(len(BLOCK_KINDS), p=p))]
        if _SHAPES[kind][0] == 1 and rng.random() < cfg.identical_rate:
            kind = "identical"
        kinds.append(kind)
        used += _SHAPES[kind][0]
    if not any(_SHAPES[k][1] for k in kinds):
        # a document needs at least one target segment
        kinds.append("tgt-del")
    return kinds


def _noisy(latent: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return _unit(latent + sigma * rng.standard_normal(latent.shape))


def _colored_noise(n: int, rng: np.random.Generator, sample_rate: int) -> np.ndarray:
    """Noise with a random smooth spectral envelope and a random level."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    # log-amplitude envelope: random values at knots evenly spaced in mel
    mel = 1127.0 * np.log1p(freqs / 700.0)
    knots = np.linspace(0.0, mel[-1], 40)
    env = np.interp(mel, knots, rng.uniform(-4, 4, size=len(knots)))
    x = np.fft.irfft(spectrum * np.exp(env), n)
    gain = math.exp(rng.uniform(math.log(0.03), math.log(0.3)))
    x *= gain / max(float(np.sqrt(np.mean(x ** 2))), 1e-12)
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)


def generate(config: SynthConfig = SynthConfig()) -> GoldCorpus:
    """Build a corpus; the same config always yields the same corpus."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []

    # block structure and embeddings
    docs: list[list[_Block]] = []
    for _ in range(cfg.n_pairs):
        blocks = []
        for kind in _draw_blocks(cfg, rng):
            b = _Block(kind, _unit(rng.standard_normal(cfg.dim)))
            ns, nt = _SHAPES[kind]
            b.src_vecs = [_noisy(b.latent, cfg.noise_sigma, rng) for _ in range(ns)]
            if kind == "identical":
                b.tgt_vecs = [b.src_vecs[0].copy()]
            else:
                b.tgt_vecs = [_noisy(b.latent, cfg.noise_sigma, rng) for _ in range(nt)]
            blocks.append(b)
        docs.append(blocks)

    # cross duplicates copy a 1-1 target from a different pair
    for p in range(cfg.n_pairs):
        if cfg.cross_dup_rate == 0 or rng.random() >= cfg.cross_dup_rate:
            continue
        donors = [(q, k) for q in range(cfg.n_pairs) if q != p
                  for k, b in enumerate(docs[q]) if b.kind == "1-1"]
        if not donors:
            continue
        q, k = donors[int(rng.integers(len(donors)))]
        latent = docs[q][k].latent
        dup = _Block("cross-dup", latent, src_vecs=[_noisy(latent, cfg.noise_sigma, rng)], twin=docs[q][k])
        pos = int(rng.integers(len(docs[p]) + 1))
        docs[p].insert(pos, dup)
    src_segments: dict[str, list[Segment]] = {}
    tgt_segments: dict[str, list[Segment]] = {}
    pairs: list[DocumentPair] = []
    gold: list[Alignment] = []
    identical: list[PlantedIdentical] = []
    src_vecs: dict[str, list[np.ndarray]] = {}
    tgt_vecs: dict[str, list[np.ndarray]] = {}
    audio: dict[str, np.ndarray] | None = {} if cfg.with_audio else None
    bursts: dict[tuple[str, int], np.ndarray] = {}
    ms = cfg.sample_rate // 1000 if cfg.with_audio else 0
    shift_ms = 10
    lo_ms, hi_ms = int(round(cfg.min_duration * 1000)), int(round(cfg.max_duration * 1000))
    max_pad_steps = int(round(cfg.max_pad * 1000)) // shift_ms

    names = [(f"s{p:04d}_src", f"s{p:04d}_tgt") for p in range(cfg.n_pairs)]
    for p, blocks in enumerate(docs):
        sd, td = names[p]
        pairs.append(DocumentPair(sd, td))
        ss: list[Segment] = []
        ts: list[Segment] = []
        sv: list[np.ndarray] = []
        tv: list[np.ndarray] = []
        t_src = t_tgt = 0
        for b in blocks:
            if b.kind == "identical":
                t_src = t_tgt = max(t_src, t_tgt)
                d = int(rng.integers(lo_ms, hi_ms + 1))
                steps = int(rng.integers(0, max_pad_steps + 1))
                lead = int(rng.integers(0, steps + 1)) * shift_ms
                trail = steps * shift_ms - lead
                b.src_idx, b.tgt_idx = [len(ss)], [len(ts)]
                ss.append(Segment(sd, len(ss), t_src / 1000, (t_src + d) / 1000))
                ts.append(Segment(td, len(ts), t_tgt / 1000, (t_tgt + lead + d + trail) / 1000))
                if audio is not None:
                    burst = _colored_noise(d * ms, rng, cfg.sample_rate)
                    bursts[(sd, b.src_idx[0])] = burst
                    bursts[(td, b.tgt_idx[0])] = np.concatenate([
                        np.zeros(lead * ms, np.int16), burst, np.zeros(trail * ms, np.int16)])
                identical.append(PlantedIdentical(sd, b.src_idx[0], td, b.tgt_idx[0], lead / 1000, trail / 1000))
                log.append({"event": "identical", "src_doc": sd, "src_index": b.src_idx[0],
                            "tgt_doc": td, "tgt_index": b.tgt_idx[0], "lead_ms": lead, "trail_ms": trail})
                t_src += d
                t_tgt += lead + d + trail
            else:
                for _ in b.src_vecs:
                    d = int(rng.integers(lo_ms, hi_ms + 1))
                    b.src_idx.append(len(ss))
                    ss.append(Segment(sd, len(ss), t_src / 1000, (t_src + d) / 1000))
                    if audio is not None:
                        bursts[(sd, b.src_idx[-1])] = _colored_noise(d * ms, rng, cfg.sample_rate)
                    t_src += d
                for _ in b.tgt_vecs:
                    d = int(rng.integers(lo_ms, hi_ms + 1))
                    b.tgt_idx.append(len(ts))
                    ts.append(Segment(td, len(ts), t_tgt / 1000, (t_tgt + d) / 1000))
                    if audio is not None:
                        bursts[(td, b.tgt_idx[-1])] = _colored_noise(d * ms, rng, cfg.sample_rate)
                    t_tgt += d
            sv.extend(b.src_vecs)
            tv.extend(b.tgt_vecs)
            src_span = Span(sd, b.src_idx[0], len(b.src_idx)) if b.src_idx else None
            tgt_span = Span(td, b.tgt_idx[0], len(b.tgt_idx)) if b.tgt_idx else None
            if b.kind == "identical":
                gold.append(Alignment(src_span, None, flags=frozenset({"deleted", "identical"})))
                gold.append(Alignment(None, tgt_span, flags=frozenset({"deleted", "identical"})))
            elif src_span is None or tgt_span is None:
                gold.append(Alignment(src_span, tgt_span, flags=frozenset({"deleted"})))
            else:
                gold.append(Alignment(src_span, tgt_span))
        src_segments[sd], tgt_segments[td] = ss, ts
        src_vecs[sd], tgt_vecs[td] = sv, tv
        if audio is not None:
            for doc, segs in ((sd, ss), (td, ts)):
                wav = np.zeros(int(round(segs[-1].end * 1000)) * ms if segs else 0, np.int16)
                for s in segs:
                    a = int(round(s.start * 1000)) * ms
                    chunk = bursts.pop((doc, s.index))
                    wav[a:a + len(chunk)] = chunk
                audio[doc] = wav

    cross_dups = []
    for p, blocks in enumerate(docs):
        for b in blocks:
            if b.kind == "cross-dup":
                twin = b.twin
                q = next(i for i, bl in enumerate(docs) if any(x is twin for x in bl))
                cd = CrossDuplicate(names[p][0], b.src_idx[0], names[q][1], twin.tgt_idx[0])
                cross_dups.append(cd)
                log.append({"event": "cross_dup", "src_doc": cd.src_doc, "src_index": cd.src_index,
                            "tgt_doc": cd.tgt_doc, "tgt_index": cd.tgt_index})

    src_emb = _overlap_embeddings(src_segments, src_vecs, cfg.overlaps)
    tgt_emb = _overlap_embeddings(tgt_segments, tgt_vecs, cfg.overlaps)
    cosines = []
    for a in gold:
        if a.is_deletion:
            continue
        x = np.mean(src_vecs[a.src.doc_id][a.src.first:a.src.first + a.src.count], axis=0)
        y = np.mean(tgt_vecs[a.tgt.doc_id][a.tgt.first:a.tgt.first + a.tgt.count], axis=0)
        cosines.append(cosine(x, y))
    mean_cos = float(np.mean(cosines)) if cosines else float("nan")
    logger.info("synth: %d pairs, %d gold alignments, mean true cosine %.4f",
                cfg.n_pairs, len(gold), mean_cos)
    return GoldCorpus(cfg, src_segments, tgt_segments, pairs, src_emb, tgt_emb, gold,
                      identical, cross_dups, mean_cos, audio, log)


def _overlap_embeddings(segments: dict[str, list[Segment]], vecs: dict[str, list[np.ndarray]],
                        config: OverlapConfig) -> EmbeddingMatrix:
    """Count-1 rows are the segment vectors; longer overlaps take the normalized mean."""
    keys, rows = [], []
    for doc in sorted(segments):
        v = np.asarray(vecs[doc])
        for o in build_overlaps(segments[doc], config):
            keys.append(o)
            rows.append(v[o.first_index] if o.count == 1 else _unit(v[o.first_index:o.first_index + o.count].mean(axis=0)))
    dim = len(rows[0]) if rows else 1
    return EmbeddingMatrix(np.asarray(rows, dtype=np.float64).reshape(len(rows), dim), keys)


def oracle_expected_detections(corpus: GoldCorpus) -> ExpectedDetections:
    """What a correct detector and a language-level miner must report on ``corpus``."""
    ident = frozenset((p.src_doc, p.src_index, p.tgt_doc, p.tgt_index) for p in corpus.identical)
    oop = frozenset((Span(c.src_doc, c.src_index, 1), Span(c.tgt_doc, c.tgt_index, 1)) for c in corpus.cross_dups)
    return ExpectedDetections(ident, oop)


def expected_from_log(log: Sequence[dict]) -> ExpectedDetections:
    """The same answer sets, rebuilt from the generation log alone."""
    ident, oop = set(), set()
    for e in log:
        if e["event"] == "identical":
            ident.add((e["src_doc"], e["src_index"], e["tgt_doc"], e["tgt_index"]))
        elif e["event"] == "cross_dup":
            oop.add((Span(e["src_doc"], e["src_index"], 1), Span(e["tgt_doc"], e["tgt_index"], 1)))
    return ExpectedDetections(frozenset(ident), frozenset(oop))
