"""Log-mel filterbanks and detection of identical untranslated segments.

``compute_fbank`` follows Kaldi-style framing (snip edges, per-frame DC
removal and pre-emphasis, power spectrum, HTK mel triangles). Every knob is
exposed on :class:`FbankConfig`.
"""

from __future__ import annotations

import math
import wave
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import DataError, Segment


@dataclass(frozen=True)
class FbankConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    frame_length: float = 0.025
    frame_shift: float = 0.010
    preemphasis: float = 0.97
    low_freq: float = 20.0
    high_freq: float = 0.0  # <= 0 means offset from Nyquist
    log_floor: float = 1e-10
    remove_dc_offset: bool = True
    window: str = "hann"

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_length * self.sample_rate))

    @property
    def shift_samples(self) -> int:
        return int(round(self.frame_shift * self.sample_rate))

    @property
    def n_fft(self) -> int:
        return 1 << (self.frame_samples - 1).bit_length()


@dataclass(frozen=True)
class IdenticalPair:
    src_index: int
    tgt_index: int
    duration_diff: float
    fbank_sim: float


def mel_scale(freq):
    return 1127.0 * np.log1p(np.asarray(freq, dtype=np.float64) / 700.0)


@lru_cache(maxsize=8)
def mel_banks(n_mels: int, n_fft: int, sample_rate: int, low_freq: float, high_freq: float) -> np.ndarray:
    """Triangular weights of shape (n_mels, n_fft // 2 + 1); the Nyquist column is zero."""
    nyquist = sample_rate / 2
    if high_freq <= 0:
        high_freq += nyquist
    if not 0 <= low_freq < high_freq <= nyquist:
        raise ValueError(f"bad mel range [{low_freq}, {high_freq}]")
    n_bins = n_fft // 2
    mel_lo, mel_hi = mel_scale(low_freq), mel_scale(high_freq)
    delta = (mel_hi - mel_lo) / (n_mels + 1)
    left = mel_lo + delta * np.arange(n_mels)[:, None]
    center = left + delta
    right = center + delta
    mel = mel_scale(np.arange(n_bins) * sample_rate / n_fft)[None, :]
    up = (mel - left) / (center - left)
    down = (right - mel) / (right - center)
    w = np.maximum(0.0, np.minimum(up, down))
    w[(mel <= left) | (mel >= right)] = 0.0
    return np.pad(w, ((0, 0), (0, 1)))


def _window(name: str, size: int) -> np.ndarray:
    i = np.arange(size)
    if name == "hann":
        return 0.5 - 0.5 * np.cos(2 * math.pi * i / (size - 1))
    if name == "hamming":
        return 0.54 - 0.46 * np.cos(2 * math.pi * i / (size - 1))
    if name == "povey":
        return (0.5 - 0.5 * np.cos(2 * math.pi * i / (size - 1))) ** 0.85
    if name == "rectangular":
        return np.ones(size)
    raise ValueError(f"unknown window {name!r}")


def compute_fbank(samples, config: FbankConfig = FbankConfig(), sample_rate: int | None = None) -> np.ndarray:
    """Log-mel filterbank matrix of shape (n_mels, T)."""
    if sample_rate is not None and sample_rate != config.sample_rate:
        raise DataError(f"expected {config.sample_rate} Hz audio, got {sample_rate} Hz")
    x = np.asarray(samples, dtype=np.float64).ravel()
    flen, shift = config.frame_samples, config.shift_samples
    if len(x) < flen:
        raise DataError(f"audio of {len(x)} samples is shorter than one frame ({flen})")
    n_frames = 1 + (len(x) - flen) // shift
    frames = sliding_window_view(x, flen)[::shift][:n_frames].copy()
    if config.remove_dc_offset:
        frames -= frames.mean(axis=1, keepdims=True)
    if config.preemphasis:
        frames[:, 1:] -= config.preemphasis * frames[:, :-1].copy()
        frames[:, 0] -= config.preemphasis * frames[:, 0]
    frames *= _window(config.window, flen)
    power = np.abs(np.fft.rfft(frames, n=config.n_fft, axis=1)) ** 2
    banks = mel_banks(config.n_mels, config.n_fft, config.sample_rate, config.low_freq, config.high_freq)
    energies = power @ banks.T
    return np.log(np.maximum(energies, config.log_floor)).T


def fbank_similarity(A: np.ndarray, B: np.ndarray) -> float:
    """Smallest mean squared error between the shorter matrix and any equally long slice of the longer."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2:
        raise DataError("filterbanks must be 2-D (n_mels, frames)")
    if A.shape[0] != B.shape[0]:
        raise DataError(f"mel-bin mismatch: {A.shape[0]} vs {B.shape[0]}")
    if A.shape[1] > B.shape[1]:
        A, B = B, A
    n, t1 = A.shape
    offsets = B.shape[1] - t1 + 1
    windows = sliding_window_view(B, t1, axis=1)  # (n, offsets, t1)
    best = math.inf
    chunk = max(1, 4_000_000 // max(1, n * t1))
    for s in range(0, offsets, chunk):
        d = windows[:, s:s + chunk, :] - A[:, None, :]
        mse = np.einsum("iot,iot->o", d, d) / (n * t1)
        best = min(best, float(mse.min()))
    return best


def _nearest(query_mid: np.ndarray, ref_mid: np.ndarray) -> np.ndarray:
    out = np.empty(len(query_mid), dtype=np.int64)
    for s in range(0, len(query_mid), 1024):
        d = np.abs(query_mid[s:s + 1024, None] - ref_mid[None, :])
        out[s:s + 1024] = d.argmin(axis=1)  # first minimum: lower index wins ties
    return out


def find_identical_candidates(src_segs: Sequence[Segment], tgt_segs: Sequence[Segment]) -> list[tuple[int, int]]:
    """Pairs of segments sitting at roughly the same position in both documents.

    Each source segment is paired with the target segment whose midpoint is
    closest, and each target segment likewise with a source segment.
    """
    if not src_segs or not tgt_segs:
        return []
    sm = np.array([s.midpoint for s in src_segs])
    tm = np.array([t.midpoint for t in tgt_segs])
    fwd = _nearest(sm, tm)
    bwd = _nearest(tm, sm)
    pairs = {(int(i), int(fwd[i])) for i in range(len(sm))}
    pairs |= {(int(bwd[j]), int(j)) for j in range(len(tm))}
    return sorted(pairs)


def detect_identical(
    candidates: Iterable[tuple[int, int]],
    src_segs: Sequence[Segment],
    tgt_segs: Sequence[Segment],
    src_fbank: Callable[[int], np.ndarray] | Mapping[int, np.ndarray],
    tgt_fbank: Callable[[int], np.ndarray] | Mapping[int, np.ndarray],
    dur_thresh: float = 0.1,
    sim_thresh: float = 5.0,
) -> list[IdenticalPair]:
    """Keep candidates whose durations and filterbanks are both close."""
    def getter(src, side, segs):
        def get(i):
            try:
                return src(i) if callable(src) else src[i]
            except (KeyError, IndexError):
                raise DataError(f"missing filterbank for {side} segment {segs[i].doc_id}#{i}") from None
        return get

    get_src = getter(src_fbank, "source", src_segs)
    get_tgt = getter(tgt_fbank, "target", tgt_segs)
    out = []
    for i, j in candidates:
        diff = abs(src_segs[i].duration - tgt_segs[j].duration)
        if diff > dur_thresh:
            continue
        sim = fbank_similarity(get_src(i), get_tgt(j))
        if sim <= sim_thresh:
            out.append(IdenticalPair(i, j, diff, sim))
    return out


# --------------------------------------------------------------------------
# audio


def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono 16-bit PCM WAV as float samples in [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise DataError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise DataError(f"{path}: expected 16-bit PCM")
        rate = w.getframerate()
        data = w.readframes(w.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, samples: np.ndarray, sample_rate: int = 16000) -> None:
    """Write int16 samples, or floats in [-1, 1], as mono 16-bit PCM."""
    samples = np.asarray(samples)
    if samples.dtype != np.int16:
        samples = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(samples.astype("<i2").tobytes())


def cut(samples: np.ndarray, start: float, end: float, sample_rate: int = 16000) -> np.ndarray:
    a = int(round(start * sample_rate))
    b = int(round(end * sample_rate))
    if a < 0 or b > len(samples) or b <= a:
        raise DataError(f"span [{start}, {end}] s outside audio of {len(samples) / sample_rate:.3f} s")
    return samples[a:b]
