"""Corpus contamination: y = x * h + alpha * n at a calibrated SNR."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import oaconvolve

from .ir_lab import ImpulseResponse
from .signal_io import Manifest, Record, Waveform, read_wav, write_manifest, write_wav

log = logging.getLogger(__name__)

SNR_FLOOR_DB = -120.0
TRIM_POLICIES = ("full", "same_length")


class ContaminationError(ValueError):
    pass


@dataclass(frozen=True)
class ContaminationSpec:
    ir: ImpulseResponse
    noise: Waveform | None = None
    target_snr_db: float = 10.0
    noise_offset_seed: int = 0
    trim_policy: str = "same_length"
    snr_jitter_db: float = 0.0

    def __post_init__(self):
        if self.trim_policy not in TRIM_POLICIES:
            raise ValueError(f"unknown trim policy {self.trim_policy!r}")
        if not np.isfinite(self.target_snr_db):
            raise ValueError("target SNR must be finite")
        if self.noise is not None and self.noise.sample_rate != self.ir.sample_rate:
            raise ValueError("noise and impulse response sample rates differ")
        if self.snr_jitter_db < 0:
            raise ValueError("snr jitter must be non-negative")


@dataclass(frozen=True)
class MixReport:
    alpha: float
    achieved_snr_db: float
    noise_offset: int


def convolve(x: Waveform, h: ImpulseResponse, trim: str = "full") -> Waveform:
    """Linear convolution via FFT overlap-add.

    ``same_length`` keeps ``len(x)`` samples starting at the direct path so the
    output stays time-aligned with ``x``.
    """
    if len(x) == 0 or len(h) == 0:
        raise ContaminationError("empty input")
    if x.sample_rate != h.sample_rate:
        raise ContaminationError(f"sample rates differ: {x.sample_rate} vs {h.sample_rate}")
    y = oaconvolve(x.samples, h.taps)
    if trim == "same_length":
        d = h.direct_path_index
        y = y[d : d + len(x)]
    elif trim != "full":
        raise ValueError(f"unknown trim policy {trim!r}")
    return Waveform(y, x.sample_rate)


def mean_power(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.dot(x, x) / x.size)


def compute_snr(signal: Waveform | np.ndarray, noise: Waveform | np.ndarray) -> float:
    s = signal.samples if isinstance(signal, Waveform) else np.asarray(signal)
    n = noise.samples if isinstance(noise, Waveform) else np.asarray(noise)
    if s.size == 0 or n.size == 0:
        raise ContaminationError("empty input")
    pn = mean_power(n)
    if pn <= 0:
        raise ContaminationError("zero-power noise")
    ps = mean_power(s)
    if ps <= 0:
        return SNR_FLOOR_DB
    return max(10.0 * np.log10(ps / pn), SNR_FLOOR_DB)


def noise_segment(noise: Waveform, length: int, offset: int) -> np.ndarray:
    """``length`` samples of ``noise`` from ``offset``, wrapping cyclically."""
    idx = (offset + np.arange(length)) % len(noise)
    return noise.samples[idx]


def mix_at_snr(reverbed: Waveform, noise: Waveform, target_snr_db: float,
               offset: int = 0) -> tuple[Waveform, MixReport]:
    if reverbed.sample_rate != noise.sample_rate:
        raise ContaminationError("signal and noise sample rates differ")
    seg = noise_segment(noise, len(reverbed), offset)
    ps, pn = mean_power(reverbed.samples), mean_power(seg)
    if pn <= 0:
        raise ContaminationError("zero-power noise")
    if ps <= 0:
        raise ContaminationError("zero-power signal")
    alpha = np.sqrt(ps / (pn * 10.0 ** (target_snr_db / 10.0)))
    scaled = alpha * seg
    out = Waveform(reverbed.samples + scaled, reverbed.sample_rate)
    return out, MixReport(float(alpha), compute_snr(reverbed.samples, scaled), int(offset % len(noise)))


def utterance_rng(seed: int, utterance_id: str) -> np.random.Generator:
    """Per-utterance generator keyed on (seed, id), independent of corpus order."""
    digest = hashlib.sha256(f"{seed}:{utterance_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def contaminate(x: Waveform, spec: ContaminationSpec, utterance_id: str) -> tuple[Waveform, MixReport | None]:
    y = convolve(x, spec.ir, spec.trim_policy)
    if spec.noise is None:
        return y, None
    rng = utterance_rng(spec.noise_offset_seed, utterance_id)
    offset = int(rng.integers(len(spec.noise)))
    target = spec.target_snr_db
    if spec.snr_jitter_db > 0:
        target += rng.uniform(-spec.snr_jitter_db, spec.snr_jitter_db)
    if mean_power(noise_segment(spec.noise, len(y), offset)) == 0:
        # silent noise track: alpha is irrelevant, the mix is pure reverberation
        return y, MixReport(0.0, np.inf, offset)
    return mix_at_snr(y, spec.noise, target, offset)


def contaminate_corpus(manifest: Manifest, spec: ContaminationSpec, out_dir) -> Manifest:
    """Contaminate every utterance, writing audio, a manifest and mix_report.tsv."""
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    condition = "rev" if spec.noise is None else "rev_noise"
    records = []
    report_path = out_dir / "mix_report.tsv"
    new_report = not report_path.exists()
    with open(report_path, "a", encoding="utf-8") as rep:
        if new_report:
            rep.write("utterance_id\talpha\tachieved_snr_db\tnoise_offset\n")
        for rec in manifest:
            try:
                x = read_wav(manifest.audio(rec))
                y, mix = contaminate(x, spec, rec.utterance_id)
                rel = Path("wav") / f"{rec.utterance_id}.wav"
                write_wav(y, out_dir / rel, "float32")
            except Exception as exc:
                raise ContaminationError(f"utterance {rec.utterance_id}: {exc}") from exc
            if mix is not None:
                rep.write(f"{rec.utterance_id}\t{mix.alpha:.9g}\t{mix.achieved_snr_db:.6f}\t{mix.noise_offset}\n")
                log.info("%s alpha=%.4g snr=%.3f dB", rec.utterance_id, mix.alpha, mix.achieved_snr_db)
            labels = manifest.labels(rec)
            records.append(Record(rec.utterance_id, str(rel), rec.transcript, condition,
                                  str(labels.resolve()) if labels else None))
    out = Manifest(records, root=out_dir)
    write_manifest(out, out_dir / "manifest.tsv")
    return out


def pink_noise(n: int, seed: int = 0, sample_rate: int = 16000) -> Waveform:
    """Seeded 1/f noise, unit RMS, shaped in the frequency domain."""
    rng = np.random.default_rng(seed)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n)
    x -= x.mean()
    return Waveform(x / np.sqrt(mean_power(x)), sample_rate)
