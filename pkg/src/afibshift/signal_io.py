"""ECG record ingestion and the synthetic four-class generator."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from . import CLASSES
from .errors import FormatError, ParseError, ValidationError
from .rng import Rng

LABELS = CLASSES
LABEL_INDEX = {c: i for i, c in enumerate(CLASSES)}

SignalFormat = Literal["csv_int", "raw_i16le"]


@dataclass(frozen=True)
class LabeledSignal:
    record_id: str
    samples: np.ndarray  # int16
    label: str

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValidationError(f"record {self.record_id!r} has no samples")
        if self.label not in LABEL_INDEX:
            raise ValidationError(f"unknown label {self.label!r} for record {self.record_id!r}")

    @property
    def label_index(self) -> int:
        return LABEL_INDEX[self.label]

    def __eq__(self, other):
        if not isinstance(other, LabeledSignal):
            return NotImplemented
        return (self.record_id == other.record_id and self.label == other.label
                and np.array_equal(self.samples, other.samples))


@dataclass
class Dataset:
    records: list[LabeledSignal] = field(default_factory=list)
    source: Literal["real", "synthetic"] = "real"

    def __post_init__(self):
        ids = [r.record_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate record ids in dataset")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label_index for r in self.records], dtype=np.int64)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.records[i] for i in indices], self.source)


def load_reference_labels(path) -> dict[str, str]:
    """Parse a REFERENCE.csv-style file of ``record_id,label`` lines."""
    labels: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2 or not parts[0].strip():
            raise ParseError(f"malformed label line {lineno}: {line!r}")
        rid, lab = parts[0].strip(), parts[1].strip()
        if lab not in LABEL_INDEX:
            raise ValidationError(f"unknown label '{lab}' at line {lineno}")
        labels[rid] = lab
    return labels


def parse_csv_int(text: str) -> np.ndarray:
    tokens = [t for t in text.replace("\n", ",").replace("\r", ",").split(",") if t.strip()]
    try:
        values = [int(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"non-integer token in signal: {exc}") from None
    arr = np.array(values, dtype=np.int64)
    if arr.size and (arr.min() < -32768 or arr.max() > 32767):
        raise ParseError("sample outside 16-bit signed range")
    return arr.astype(np.int16)


def parse_raw_i16le(data: bytes) -> np.ndarray:
    if len(data) % 2:
        raise FormatError("truncated sample: odd byte count for raw_i16le")
    return np.frombuffer(data, dtype="<i2").astype(np.int16)


def load_signal(path, format: SignalFormat = "csv_int") -> np.ndarray:
    path = Path(path)
    if format == "csv_int":
        return parse_csv_int(path.read_text())
    if format == "raw_i16le":
        return parse_raw_i16le(path.read_bytes())
    raise ValidationError(f"unknown signal format {format!r}")


def write_signal(path, samples, format: SignalFormat = "csv_int") -> None:
    samples = np.asarray(samples, dtype=np.int16)
    path = Path(path)
    if format == "csv_int":
        path.write_text("\n".join(str(int(v)) for v in samples) + "\n")
    elif format == "raw_i16le":
        path.write_bytes(samples.astype("<i2").tobytes())
    else:
        raise ValidationError(f"unknown signal format {format!r}")


_EXT = {"csv_int": ".csv", "raw_i16le": ".bin"}


def save_dataset(dataset: Dataset, directory, format: SignalFormat = "csv_int") -> None:
    """Write ``REFERENCE.csv`` plus one signal file per record."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for rec in dataset:
        write_signal(directory / f"{rec.record_id}{_EXT[format]}", rec.samples, format)
        lines.append(f"{rec.record_id},{rec.label}")
    (directory / "REFERENCE.csv").write_text("\n".join(lines) + ("\n" if lines else ""))


def load_dataset(directory, format: SignalFormat | None = None,
                 source: Literal["real", "synthetic"] = "real") -> Dataset:
    """Load every record named in ``REFERENCE.csv``, in file order.

    ``format`` is inferred per record from the file extension when not given.
    """
    directory = Path(directory)
    labels = load_reference_labels(directory / "REFERENCE.csv")
    records = []
    for rid, lab in labels.items():
        fmts = [format] if format else list(_EXT)
        for fmt in fmts:
            p = directory / f"{rid}{_EXT[fmt]}"
            if p.exists():
                records.append(LabeledSignal(rid, load_signal(p, fmt), lab))
                break
        else:
            raise ValidationError(f"no signal file for record {rid!r} in {os.fspath(directory)}")
    return Dataset(records, source)


# --- synthetic generator ---------------------------------------------------

_BEAT_AMP = 900.0


def _spike(length: int, centers, amp: np.ndarray, width: float = 3.0) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    out = np.zeros(length)
    for c, a in zip(centers, amp):
        out += a * np.maximum(0.0, 1.0 - np.abs(t - c) / width)
    return out


def _bump(length: int, centers, amp: np.ndarray, width: float) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    out = np.zeros(length)
    for c, a in zip(centers, amp):
        out += a * np.exp(-0.5 * ((t - c) / width) ** 2)
    return out


def _beat_times(length: int, intervals: np.ndarray, offset: float) -> np.ndarray:
    times = offset + np.concatenate([[0.0], np.cumsum(intervals)])
    return times[times < length + 40]


def _synth_record(label: str, length: int, rng: Rng) -> np.ndarray:
    base = rng.uniform(1, 80.0, 120.0)[0]
    gain = rng.uniform(1, 0.8, 1.2)[0]
    n_beats = int(length / 40) + 4
    offset = rng.uniform(1, 0.0, base)[0]
    noise = 15.0 * rng.normal(length)

    if label == "~":
        sig = 400.0 * rng.normal(length)
        return sig * gain

    if label == "N":
        intervals = base + 3.0 * rng.normal(n_beats)
        t = _beat_times(length, intervals, offset)
        sig = _spike(length, t, np.full(len(t), _BEAT_AMP))
        sig += _bump(length, t + 0.3 * base, np.full(len(t), 0.3 * _BEAT_AMP), 6.0)
    elif label == "A":
        intervals = rng.uniform(n_beats, 0.45 * base, 1.55 * base)
        t = _beat_times(length, intervals, offset)
        sig = _spike(length, t, np.full(len(t), _BEAT_AMP))
        # fibrillatory baseline in place of an organized secondary wave
        period = rng.uniform(1, 6.0, 9.0)[0]
        phase = rng.uniform(1, 0.0, 2 * np.pi)[0]
        sig += 60.0 * np.sin(2 * np.pi * np.arange(length) / period + phase)
    elif label == "O":
        pattern = np.where(np.arange(n_beats) % 2 == 0, 0.65, 1.35)
        intervals = base * pattern + 3.0 * rng.normal(n_beats)
        t = _beat_times(length, intervals, offset)
        sig = _spike(length, t, np.full(len(t), _BEAT_AMP))
        sig += _bump(length, t + 0.3 * base, np.full(len(t), -0.3 * _BEAT_AMP), 6.0)
    else:  # pragma: no cover - guarded by caller
        raise ValidationError(f"unknown label {label!r}")
    return gain * (sig + noise)


def generate_synthetic_dataset(n_per_class: int, length_range=(600, 1200), seed: int = 0) -> Dataset:
    """Deterministic balanced four-class dataset.

    Records are generated class by class (N, A, O, ~), each from its own
    sub-stream of the seed, with lengths uniform on ``length_range``.
    """
    lo, hi = (int(v) for v in length_range)
    if n_per_class < 1:
        raise ValidationError("n_per_class must be >= 1")
    if not 1 <= lo <= hi:
        raise ValidationError("length_range must satisfy 1 <= min <= max")
    root = Rng(seed)
    records = []
    for label in CLASSES:
        rng = root.spawn(f"class:{label}")
        lengths = rng.integers(n_per_class, lo, hi)
        for i, length in enumerate(lengths):
            sig = _synth_record(label, int(length), rng.spawn(f"record:{i}"))
            samples = np.clip(np.rint(sig), -32768, 32767).astype(np.int16)
            tag = "X" if label == "~" else label
            records.append(LabeledSignal(f"S{tag}{i:05d}", samples, label))
    return Dataset(records, "synthetic")
