"""Acoustic frontend: 13 MFCC + pitch + PoV, deltas, context splicing, CMVN.

Stage order is framing -> (mfcc || pitch/pov) -> deltas -> splice -> global
mean/variance normalisation.  Base vectors have 45 components:
(13 + 2) * 3.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .signal_io import Waveform

N_MELS = 23
N_CEPS = 13
BASE_DIM = (N_CEPS + 2) * 3
LOG_FLOOR = 1e-10
VAR_FLOOR = 1e-8
SILENCE_ENERGY = 1e-8

_STATIC_LABELS = [f"mfcc{i}" for i in range(N_CEPS)] + ["pitch", "pov"]
BASE_LABELS = _STATIC_LABELS + [f"d_{s}" for s in _STATIC_LABELS] + [f"dd_{s}" for s in _STATIC_LABELS]


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FrameSpec:
    frame_len: float = 0.025
    hop: float = 0.010
    window: str = "hamming"
    preemphasis: float = 0.97
    pitch_window: float = 0.040

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_len:
            raise ValueError(f"need 0 < hop <= frame_len, got hop={self.hop}, frame_len={self.frame_len}")
        if self.window != "hamming":
            raise ValueError(f"unsupported window {self.window!r}")

    def frame_samples(self, sample_rate: int) -> int:
        return int(round(self.frame_len * sample_rate))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop * sample_rate))

    def n_frames(self, n_samples: int, sample_rate: int) -> int:
        flen = self.frame_samples(sample_rate)
        if n_samples < flen:
            return 0
        return 1 + (n_samples - flen) // self.hop_samples(sample_rate)


@dataclass(frozen=True)
class ContextWindowSpec:
    past: int = 8
    future: int = 8

    def __post_init__(self):
        if self.past < 0 or self.future < 0:
            raise ValueError("context sizes must be non-negative")

    @property
    def length(self) -> int:
        return self.past + self.future + 1

    @property
    def name(self) -> str:
        return f"P{self.past}-F{self.future}"

    @classmethod
    def parse(cls, text: str) -> "ContextWindowSpec":
        """Parse names like ``P10-F6``."""
        p, f = text.strip().upper().split("-")
        if not (p.startswith("P") and f.startswith("F")):
            raise ValueError(f"bad window name {text!r}")
        return cls(int(p[1:]), int(f[1:]))


def frame_signal(w: Waveform, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Pre-emphasised, Hamming-windowed frames, shape (n_frames, frame_samples)."""
    flen = spec.frame_samples(w.sample_rate)
    hop = spec.hop_samples(w.sample_rate)
    n = spec.n_frames(len(w), w.sample_rate)
    if n == 0:
        raise FeatureError(f"waveform of {len(w)} samples is shorter than one frame ({flen})")
    idx = np.arange(flen)[None, :] + hop * np.arange(n)[:, None]
    frames = w.samples[idx]
    if spec.preemphasis:
        prev = np.concatenate([frames[:, :1], frames[:, :-1]], axis=1)
        frames = frames - spec.preemphasis * prev
    return frames * np.hamming(flen)[None, :]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the mel scale spanning 0 Hz to Nyquist, (n_mels, n_fft//2+1)."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def fft_size(frame_samples: int) -> int:
    return 1 << int(np.ceil(np.log2(frame_samples)))


def log_mel_energies(frames: np.ndarray, sample_rate: int, n_mels: int = N_MELS) -> np.ndarray:
    n_fft = fft_size(frames.shape[1])
    power = np.abs(np.fft.rfft(frames, n_fft, axis=1)) ** 2
    mel = power @ mel_filterbank(n_mels, n_fft, sample_rate).T
    return np.log(np.maximum(mel, LOG_FLOOR))


def cepstra(log_mel: np.ndarray, n_ceps: int = N_CEPS) -> np.ndarray:
    return dct(log_mel, type=2, norm="ortho", axis=-1)[..., :n_ceps]


def mfcc(frames: np.ndarray, sample_rate: int, n_mels: int = N_MELS, n_ceps: int = N_CEPS) -> np.ndarray:
    if len(frames) == 0:
        raise FeatureError("no frames")
    return cepstra(log_mel_energies(frames, sample_rate, n_mels), n_ceps)


def pitch_segments(w: Waveform, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Extended analysis windows centred on each frame (zero padded at the edges)."""
    sr = w.sample_rate
    flen, hop = spec.frame_samples(sr), spec.hop_samples(sr)
    n = spec.n_frames(len(w), sr)
    if n == 0:
        raise FeatureError("waveform shorter than one frame")
    wlen = int(round(spec.pitch_window * sr))
    starts = hop * np.arange(n) + flen // 2 - wlen // 2
    pad = wlen
    x = np.pad(w.samples, (pad, pad))
    idx = (starts + pad)[:, None] + np.arange(wlen)[None, :]
    return x[idx]


def nccf(segments: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalised cross-correlation for lags 0..max_lag of each segment.

    The reference part is the first ``len - max_lag`` samples, so every lag
    compares equally long stretches.
    """
    segs = np.atleast_2d(np.asarray(segments, dtype=np.float64))
    wlen = segs.shape[1]
    m = wlen - max_lag
    if m <= 0:
        raise FeatureError("analysis window too short for the lag range")
    n_fft = 1 << int(np.ceil(np.log2(wlen + m)))
    ref = np.fft.rfft(segs[:, :m], n_fft, axis=1)
    full = np.fft.rfft(segs, n_fft, axis=1)
    corr = np.fft.irfft(np.conj(ref) * full, n_fft, axis=1)[:, : max_lag + 1]
    e_ref = np.sum(segs[:, :m] ** 2, axis=1, keepdims=True)
    cs = np.concatenate([np.zeros((segs.shape[0], 1)), np.cumsum(segs**2, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    e_lag = cs[:, lags + m] - cs[:, lags]
    return corr / np.sqrt(e_ref * e_lag + 1e-12)


def nccf_pitch(segments: np.ndarray, sample_rate: int, f_min: float = 50.0, f_max: float = 400.0,
               octave_tolerance: float = 0.97) -> np.ndarray:
    """Pitch (Hz) and PoV per analysis segment, shape (n, 2).

    The chosen lag is the shortest local NCCF maximum within
    ``octave_tolerance`` of the best one, refined by parabolic interpolation;
    this keeps exact multiples of the period from winning on round-off.
    """
    segs = np.atleast_2d(np.asarray(segments, dtype=np.float64))
    lo = int(np.floor(sample_rate / f_max))
    hi = int(np.ceil(sample_rate / f_min))
    r = nccf(segs, hi)
    out = np.zeros((segs.shape[0], 2))
    m = segs.shape[1] - hi
    energy = np.sum(segs[:, :m] ** 2, axis=1)
    for i in range(segs.shape[0]):
        if energy[i] < SILENCE_ENERGY:
            continue
        c = r[i, lo : hi + 1]
        best = c.max()
        peaks = np.flatnonzero((c[1:-1] >= c[:-2]) & (c[1:-1] >= c[2:])) + 1
        if best > 0:
            good = peaks[c[peaks] >= octave_tolerance * best]
        else:
            good = peaks[:0]
        k = int(good[0]) if good.size else int(np.argmax(c))
        lag = float(lo + k)
        if 0 < k < c.size - 1:
            a, b, d = c[k - 1], c[k], c[k + 1]
            den = a - 2 * b + d
            if den < 0:
                lag += 0.5 * (a - d) / den
        out[i, 0] = sample_rate / lag
        out[i, 1] = min(max(best, 0.0), 1.0)
    return out


def pitch_pov(w: Waveform, spec: FrameSpec = FrameSpec(), f_min: float = 50.0, f_max: float = 400.0) -> np.ndarray:
    return nccf_pitch(pitch_segments(w, spec), w.sample_rate, f_min, f_max)


def deltas(f: np.ndarray, half_window: int = 2) -> np.ndarray:
    """Regression deltas with edge frames replicated."""
    f = np.asarray(f, dtype=np.float64)
    n = len(f)
    padded = np.concatenate([np.repeat(f[:1], half_window, 0), f, np.repeat(f[-1:], half_window, 0)])
    num = np.zeros_like(f)
    for k in range(1, half_window + 1):
        num += k * (padded[half_window + k : half_window + k + n] - padded[half_window - k : half_window - k + n])
    return num / (2 * sum(k * k for k in range(1, half_window + 1)))


def add_deltas(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != N_CEPS + 2:
        raise FeatureError(f"expected {N_CEPS + 2} static columns, got shape {f.shape}")
    d = deltas(f)
    return np.concatenate([f, d, deltas(d)], axis=1)


def splice(f: np.ndarray, window: ContextWindowSpec) -> np.ndarray:
    """Row t becomes [x_{t-P}, ..., x_t, ..., x_{t+F}], edges replicated."""
    f = np.asarray(f)
    if len(f) == 0:
        raise FeatureError("cannot splice an empty matrix")
    offsets = np.arange(-window.past, window.future + 1)
    idx = np.clip(np.arange(len(f))[:, None] + offsets[None, :], 0, len(f) - 1)
    return f[idx].reshape(len(f), -1)


def base_features(w: Waveform, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """The 45-dimensional per-frame vectors."""
    frames = frame_signal(w, spec)
    static = np.concatenate([mfcc(frames, w.sample_rate), pitch_pov(w, spec)], axis=1)
    return add_deltas(static)


# ---------------------------------------------------------------------------
# Normalisation


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    var: np.ndarray
    count: int

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("statistics need at least one frame")
        if self.mean.shape != self.var.shape:
            raise ValueError("mean and variance shapes differ")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def to_matrix(self) -> np.ndarray:
        return np.stack([self.mean, self.var])

    @classmethod
    def from_matrix(cls, m: np.ndarray, count: int = 1) -> "NormalizationStats":
        return cls(np.asarray(m[0], np.float64), np.asarray(m[1], np.float64), count)


@dataclass
class StatsAccumulator:
    """Mergeable (sum, sum of squares, count) accumulator."""

    total: np.ndarray | None = None
    total_sq: np.ndarray | None = None
    count: int = 0

    def add(self, f: np.ndarray) -> "StatsAccumulator":
        f = np.asarray(f, dtype=np.float64)
        if self.total is None:
            self.total = np.zeros(f.shape[1])
            self.total_sq = np.zeros(f.shape[1])
        elif f.shape[1] != self.total.shape[0]:
            raise FeatureError(f"dimension mismatch: {f.shape[1]} vs {self.total.shape[0]}")
        self.total += f.sum(axis=0)
        self.total_sq += np.einsum("ij,ij->j", f, f)
        self.count += f.shape[0]
        return self

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        if other.total is None:
            return self
        if self.total is None:
            self.total, self.total_sq = other.total.copy(), other.total_sq.copy()
        else:
            self.total = self.total + other.total
            self.total_sq = self.total_sq + other.total_sq
        self.count += other.count
        return self

    def finalize(self) -> NormalizationStats:
        if self.count < 2:
            raise FeatureError("need at least 2 frames to fit normalisation")
        mean = self.total / self.count
        var = np.maximum(self.total_sq / self.count - mean**2, 0.0)
        return NormalizationStats(mean, var, self.count)


def fit_normalizer(features) -> NormalizationStats:
    """Fit global statistics over a matrix or an iterable of matrices."""
    acc = StatsAccumulator()
    if isinstance(features, np.ndarray):
        features = [features]
    for f in features:
        acc.add(f)
    return acc.finalize()


def apply_normalizer(f: np.ndarray, stats: NormalizationStats, dtype=np.float64) -> np.ndarray:
    f = np.asarray(f)
    if f.shape[-1] != stats.dim:
        raise FeatureError(f"dimension mismatch: features {f.shape[-1]}, stats {stats.dim}")
    scale = 1.0 / np.sqrt(np.maximum(stats.var, VAR_FLOOR))
    return ((f - stats.mean) * scale).astype(dtype, copy=False)


def extract_pipeline(w: Waveform, spec: FrameSpec = FrameSpec(), window: ContextWindowSpec = ContextWindowSpec(),
                     stats: NormalizationStats | None = None) -> np.ndarray:
    spliced = splice(base_features(w, spec), window)
    return spliced if stats is None else apply_normalizer(spliced, stats)


def spliced_labels(window: ContextWindowSpec) -> list[str]:
    return [f"{lab}[{o:+d}]" for o in range(-window.past, window.future + 1) for lab in BASE_LABELS]
