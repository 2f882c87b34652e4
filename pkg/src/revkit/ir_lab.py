"""Impulse responses: exponential sine sweep measurement, synthesis and T60.

The sweep/inverse-filter pair follows the usual Farina construction: the
inverse filter is the time-reversed sweep with a 6 dB/octave amplitude tilt,
so that sweep * inverse is (nearly) a delayed pulse.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import oaconvolve

from .signal_io import CANONICAL_RATE, Waveform, read_wav, write_wav

DECAY_60DB = np.log(1000.0)  # amplitude decay constant for 60 dB, ~6.91


class MeasurementError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    f_start: float = 20.0
    f_end: float = 7900.0
    duration: float = 10.0
    amplitude: float = 1.0
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        if not 0 < self.f_start < self.f_end < self.sample_rate / 2:
            raise ValueError(
                f"need 0 < f_start < f_end < fs/2, got {self.f_start}, {self.f_end}, fs={self.sample_rate}"
            )
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not 0 < self.amplitude <= 1:
            raise ValueError("amplitude must lie in (0, 1]")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def log_ratio(self) -> float:
        return float(np.log(self.f_end / self.f_start))

    def phase(self, t):
        k = 2 * np.pi * self.f_start * self.duration / self.log_ratio
        return k * (np.exp(np.asarray(t) * self.log_ratio / self.duration) - 1.0)

    def instantaneous_frequency(self, t):
        """Analytic d(phase)/dt / 2pi."""
        return self.f_start * np.exp(np.asarray(t) * self.log_ratio / self.duration)


@dataclass(frozen=True)
class ImpulseResponse:
    taps: np.ndarray
    sample_rate: int = CANONICAL_RATE
    direct_path_index: int | None = None

    def __post_init__(self):
        h = np.asarray(self.taps, dtype=np.float64)
        if h.ndim != 1 or h.size < 1:
            raise ValueError("impulse response needs at least one tap")
        if not np.all(np.isfinite(h)):
            raise ValueError("impulse response contains non-finite taps")
        h.setflags(write=False)
        object.__setattr__(self, "taps", h)
        idx = self.direct_path_index
        if idx is None:
            idx = int(np.argmax(np.abs(h)))
        if not 0 <= idx < h.size:
            raise ValueError(f"direct_path_index {idx} outside [0, {h.size})")
        object.__setattr__(self, "direct_path_index", int(idx))

    def __len__(self) -> int:
        return self.taps.shape[0]

    @classmethod
    def unit(cls, delay: int = 0, sample_rate: int = CANONICAL_RATE) -> "ImpulseResponse":
        h = np.zeros(delay + 1)
        h[delay] = 1.0
        return cls(h, sample_rate, delay)


def _sidecar(path) -> Path:
    return Path(str(path) + ".txt")


def save_ir(ir: ImpulseResponse, path) -> None:
    """float32 WAV plus ``<path>.txt`` holding the direct-path index."""
    write_wav(Waveform(ir.taps, ir.sample_rate), path, "float32")
    _sidecar(path).write_text(f"direct_path_index {ir.direct_path_index}\n", encoding="utf-8")


def load_ir(path) -> ImpulseResponse:
    w = read_wav(path, expected_rate=None)
    side = _sidecar(path)
    idx = None
    if side.exists():
        key, _, val = side.read_text(encoding="utf-8").strip().partition(" ")
        if key != "direct_path_index":
            raise ValueError(f"{side}: malformed sidecar")
        idx = int(val)
    return ImpulseResponse(w.samples, w.sample_rate, idx)


@dataclass(frozen=True)
class IrAnalysis:
    t60: float
    edc: np.ndarray
    fit_range: tuple[float, float]
    slope_db_per_s: float


def generate_ess(spec: SweepSpec) -> Waveform:
    t = np.arange(spec.n_samples) / spec.sample_rate
    return Waveform(spec.amplitude * np.sin(spec.phase(t)), spec.sample_rate)


@lru_cache(maxsize=8)
def _inverse_taps(spec: SweepSpec) -> np.ndarray:
    sweep = generate_ess(spec).samples
    t = np.arange(spec.n_samples) / spec.sample_rate
    # envelope runs on the reversed time axis: high frequencies come first and
    # keep full amplitude, low ones are attenuated by f_start/f
    inv = sweep[::-1] * np.exp(-t * spec.log_ratio / spec.duration)
    peak = np.max(np.abs(oaconvolve(sweep, inv)))
    inv = inv / peak
    inv.setflags(write=False)
    return inv


def inverse_filter(spec: SweepSpec) -> Waveform:
    """Time-reversed, amplitude-tilted sweep scaled so sweep * filter peaks at 1."""
    return Waveform(_inverse_taps(spec), spec.sample_rate)


def _next_pow2(n: int) -> int:
    return 1 << int(np.ceil(np.log2(max(n, 1))))


def deconvolve_sweep(recording: Waveform, spec: SweepSpec, equalize: bool = True,
                     reg: float = 1e-12) -> np.ndarray:
    """Convolve a sweep recording with the inverse filter.

    With ``equalize`` the result is further divided by the spectrum of the
    sweep/inverse-filter pulse (Tikhonov-regularised by ``reg`` relative to
    its peak power).  That removes the band-edge ripple and the pulse's group
    delay, so the returned sequence starts at lag 0.  Without it the raw
    Farina output is returned, with lag 0 at index ``n_samples - 1``.
    """
    sweep = generate_ess(spec).samples
    inv = _inverse_taps(spec)
    y = recording.samples
    if not equalize:
        return oaconvolve(y, inv)
    n = _next_pow2(len(y) + len(inv))
    inv_f = np.fft.rfft(inv, n)
    pulse_f = np.fft.rfft(sweep, n) * inv_f
    power = np.abs(pulse_f) ** 2
    eq = np.conj(pulse_f) / (power + reg * power.max())
    out = np.fft.irfft(np.fft.rfft(y, n) * inv_f * eq, n)
    return out[: len(y)]


def estimate_ir(recording: Waveform, spec: SweepSpec, ir_length: int,
                equalize: bool = True) -> ImpulseResponse:
    """Recover the channel impulse response from a recorded sweep.

    The window of ``ir_length`` taps starts at the global magnitude peak
    (taken as the direct path), which therefore sits at index 0.
    """
    if recording.sample_rate != spec.sample_rate:
        raise MeasurementError(
            f"recording rate {recording.sample_rate} != sweep rate {spec.sample_rate}"
        )
    if len(recording) < spec.n_samples:
        raise MeasurementError("recording shorter than sweep")
    if np.max(np.abs(recording.samples)) < 1e-6:
        raise MeasurementError("silent recording")
    if ir_length < 1:
        raise ValueError("ir_length must be positive")
    raw = deconvolve_sweep(recording, spec, equalize=equalize)
    start = int(np.argmax(np.abs(raw)))
    taps = raw[start : start + ir_length]
    if len(taps) < ir_length:
        taps = np.pad(taps, (0, ir_length - len(taps)))
    return ImpulseResponse(taps, spec.sample_rate, 0)


def synth_ir(t60: float, length: int, sample_rate: int = CANONICAL_RATE, direct_delay: int = 0,
             seed: int = 0, drr_db: float | None = 0.0) -> ImpulseResponse:
    """Exponentially decaying Gaussian tail behind a unit direct tap.

    ``drr_db`` sets the direct-to-reverberant energy ratio by scaling the
    tail; ``None`` leaves the tail at unit variance before enveloping.
    """
    if t60 <= 0:
        raise ValueError("t60 must be positive")
    if not 0 <= direct_delay < length:
        raise ValueError("direct_delay must lie inside the response")
    rng = np.random.default_rng(seed)
    h = np.zeros(length)
    h[direct_delay] = 1.0
    n_tail = length - direct_delay - 1
    if n_tail > 0:
        t = np.arange(1, n_tail + 1) / sample_rate
        tail = rng.standard_normal(n_tail) * np.exp(-DECAY_60DB * t / t60)
        if drr_db is not None:
            tail *= np.sqrt(10.0 ** (-drr_db / 10.0) / np.sum(tail**2))
        h[direct_delay + 1 :] = tail
    return ImpulseResponse(h, sample_rate, direct_delay)


def energy_decay_curve(taps: np.ndarray, floor_db: float = -300.0) -> np.ndarray:
    """Schroeder backward integral in dB relative to the total energy."""
    e = np.asarray(taps, dtype=np.float64) ** 2
    total = e.sum()
    if total <= 0:
        raise MeasurementError("impulse response has no energy")
    back = np.cumsum(e[::-1])[::-1] / total
    with np.errstate(divide="ignore"):
        edc = 10.0 * np.log10(back)
    edc = np.maximum(edc, floor_db)
    # enforce monotonicity against round-off in the reversed cumsum
    return np.minimum.accumulate(edc)


def estimate_t60(ir: ImpulseResponse, fit_range: tuple[float, float] = (-5.0, -25.0)) -> IrAnalysis:
    """T60 from a line fit to the EDC between the two ``fit_range`` levels."""
    if np.count_nonzero(ir.taps) < 2:
        raise MeasurementError("insufficient decay range")
    edc = energy_decay_curve(ir.taps)
    hi, lo = fit_range
    if edc[-1] > lo:
        raise MeasurementError("insufficient decay range")
    mask = (edc <= hi) & (edc >= lo)
    if np.count_nonzero(mask) < 2:
        raise MeasurementError("insufficient decay range")
    t = np.flatnonzero(mask) / ir.sample_rate
    slope, _ = np.polyfit(t, edc[mask], 1)
    if slope >= 0:
        raise MeasurementError("insufficient decay range")
    return IrAnalysis(t60=-60.0 / slope, edc=edc, fit_range=(hi, lo), slope_db_per_s=float(slope))
