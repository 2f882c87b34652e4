"""Audio and corpus persistence.

WAV files are mono RIFF/WAVE at 16 kHz, PCM16 or IEEE float32.  Manifests
are tab-separated text, one utterance per line::

    id <TAB> audio_path <TAB> phone phone ... <TAB> condition [<TAB> labels_path]

Feature matrices and alignments share one little-endian binary archive
layout ("RVK1"): magic, u32 rows, u32 cols, u8 dtype code, row-major payload.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile

CANONICAL_RATE = 16000
CONDITIONS = ("clean", "rev", "rev_noise")

ARCHIVE_MAGIC = b"RVK1"
_HEADER = struct.Struct("<4sIIB")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<u4")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<u4"): 1}


class AudioError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    """Mono sampled audio.  Samples are held as float64."""

    samples: np.ndarray
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise AudioError("waveform must be one-dimensional (mono)")
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise AudioError("waveform contains non-finite samples")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def read_wav(path, expected_rate: int | None = CANONICAL_RATE) -> Waveform:
    """Read a mono PCM16 or float32 WAV file.

    PCM16 is scaled by 1/32768.  Files whose rate differs from
    ``expected_rate`` are rejected rather than resampled; pass
    ``expected_rate=None`` to accept any rate.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise AudioError(f"{path}: unsupported encoding ({exc})") from exc
    if data.ndim != 1:
        raise AudioError(f"{path}: multichannel audio ({data.shape[1]} channels) is not supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported encoding {data.dtype}")
    if samples.size == 0:
        raise AudioError(f"{path}: empty audio")
    if expected_rate is not None and rate != expected_rate:
        raise AudioError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    return Waveform(samples, int(rate))


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    # -1.0 maps to -32768; anything at or above 1 - 2^-15 saturates to 32767
    scaled = np.round(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(scaled, -32768, 32767).astype(np.int16)


def write_wav(w: Waveform, path, encoding: str = "float32") -> None:
    path = Path(path)
    if encoding == "pcm16":
        data = to_pcm16(w.samples)
    elif encoding == "float32":
        data = w.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, w.sample_rate, data)


# ---------------------------------------------------------------------------
# Manifests


@dataclass(frozen=True)
class Record:
    utterance_id: str
    audio_path: str
    transcript: tuple[str, ...]
    condition: str = "clean"
    oracle_labels_path: str | None = None

    def to_line(self) -> str:
        fields = [self.utterance_id, self.audio_path, " ".join(self.transcript), self.condition]
        if self.oracle_labels_path:
            fields.append(self.oracle_labels_path)
        return "\t".join(fields)


@dataclass
class Manifest:
    records: list[Record] = field(default_factory=list)
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.utterance_id in seen:
                raise ManifestError(f"duplicate utterance id {r.utterance_id!r}")
            seen.add(r.utterance_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def audio(self, record: Record) -> Path:
        p = Path(record.audio_path)
        return p if p.is_absolute() else self.root / p

    def labels(self, record: Record) -> Path | None:
        if record.oracle_labels_path is None:
            return None
        p = Path(record.oracle_labels_path)
        return p if p.is_absolute() else self.root / p

    def ids(self) -> list[str]:
        return [r.utterance_id for r in self.records]


def parse_manifest_line(line: str, lineno: int, phones=None) -> Record:
    fields = line.rstrip("\n").split("\t")
    if len(fields) not in (4, 5):
        raise ManifestError(f"line {lineno}: expected 4 or 5 tab-separated fields, got {len(fields)}")
    uid, audio, transcript, condition = fields[:4]
    if not uid:
        raise ManifestError(f"line {lineno}: empty utterance id")
    if condition not in CONDITIONS:
        raise ManifestError(f"line {lineno}: unknown condition {condition!r}")
    symbols = tuple(transcript.split())
    if not symbols:
        raise ManifestError(f"line {lineno}: empty transcript")
    if phones is not None:
        for s in symbols:
            if s not in phones:
                raise ManifestError(f"line {lineno}: unknown phone symbol {s!r}")
    labels = fields[4] if len(fields) == 5 and fields[4] else None
    return Record(uid, audio, symbols, condition, labels)


def load_manifest(path, phones=None) -> Manifest:
    """Parse and validate a manifest.  ``phones`` is any container of symbols."""
    path = Path(path)
    records = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            rec = parse_manifest_line(line, lineno, phones)
            if rec.utterance_id in seen:
                raise ManifestError(
                    f"line {lineno}: duplicate utterance id {rec.utterance_id!r} "
                    f"(first seen on line {seen[rec.utterance_id]})"
                )
            seen[rec.utterance_id] = lineno
            records.append(rec)
    return Manifest(records, root=path.parent)


def write_manifest(manifest: Manifest | Iterable[Record], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in manifest:
            fh.write(r.to_line() + "\n")


# ---------------------------------------------------------------------------
# RVK1 binary archives


def write_archive(path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError("archives hold 2-D matrices")
    if np.issubdtype(m.dtype, np.integer):
        if m.size and m.min() < 0:
            raise ValueError("negative values cannot be stored as u32")
        m = m.astype("<u4")
    else:
        m = m.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ARCHIVE_MAGIC, m.shape[0], m.shape[1], _CODES[m.dtype]))
        fh.write(np.ascontiguousarray(m).tobytes())


def read_archive(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated archive header")
        magic, rows, cols, code = _HEADER.unpack(head)
        if magic != ARCHIVE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if code not in _DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code}")
        dtype = _DTYPES[code]
        payload = fh.read()
    expected = rows * cols * dtype.itemsize
    if len(payload) != expected:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(rows, cols).copy()


def write_indexed_archive(path, items: Sequence[tuple[str, np.ndarray]]) -> None:
    """Stack per-utterance matrices into one archive plus ``<path>.index``.

    The index has one ``id<TAB>start<TAB>end`` line per utterance.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks, lines, start = [], [], 0
    for uid, m in items:
        m = np.asarray(m)
        if m.ndim == 1:
            m = m[:, None]
        blocks.append(m)
        lines.append(f"{uid}\t{start}\t{start + m.shape[0]}")
        start += m.shape[0]
    if not blocks:
        raise ValueError("nothing to write")
    write_archive(path, np.concatenate(blocks, axis=0))
    Path(str(path) + ".index").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_indexed_archive(path) -> dict[str, np.ndarray]:
    path = Path(path)
    data = read_archive(path)
    out = {}
    for line in Path(str(path) + ".index").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        uid, start, end = line.split("\t")
        out[uid] = data[int(start) : int(end)]
    return out
