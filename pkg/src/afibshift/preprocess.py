"""Standardization, fixed-length fitting, padding audit, stratified splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import CLASSES
from .errors import StratificationError, ValidationError
from .rng import Rng
from .signal_io import Dataset

DEFAULT_LENGTH = 18000


@dataclass(frozen=True)
class FixedInput:
    values: np.ndarray
    was_padded: bool = False
    was_trimmed: bool = False


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ValidationError("split fractions must be three positive numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValidationError("split fractions must sum to 1")


def standardize(samples) -> np.ndarray:
    """Zero mean, unit population variance. Constant input maps to zeros."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValidationError("cannot standardize an empty signal")
    x = x - x.mean()
    std = np.sqrt(np.mean(x * x))
    if std == 0.0:
        return np.zeros_like(x)
    return x / std


def fit_length(values, length: int = DEFAULT_LENGTH) -> FixedInput:
    """Zero-pad the tail or keep the head so the result has exactly ``length`` samples."""
    if length < 1:
        raise ValidationError("length must be >= 1")
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if n < length:
        return FixedInput(np.concatenate([x, np.zeros(length - n)]), was_padded=True)
    if n > length:
        return FixedInput(x[:length].copy(), was_trimmed=True)
    return FixedInput(x.copy())


def prepare_inputs(dataset: Dataset, length: int, dtype=np.float32) -> np.ndarray:
    """Stack standardized, length-fitted records into an (N, 1, L) array."""
    out = np.empty((len(dataset), 1, length), dtype=dtype)
    for i, rec in enumerate(dataset):
        out[i, 0] = fit_length(standardize(rec.samples), length).values
    return out


@dataclass
class PaddingRow:
    label: str
    padded_count: int
    total_count: int
    padded_share: float  # % of all padded records
    total_share: float   # % of all records


def padding_report(dataset: Dataset, length: int = DEFAULT_LENGTH) -> list[PaddingRow]:
    """Per-class count of records shorter than ``length`` (the ones that get padded)."""
    if len(dataset) == 0:
        raise ValidationError("padding_report needs a nonempty dataset")
    padded = {c: 0 for c in CLASSES}
    total = {c: 0 for c in CLASSES}
    for rec in dataset:
        total[rec.label] += 1
        if len(rec.samples) < length:
            padded[rec.label] += 1
    n_pad = sum(padded.values())
    n_all = sum(total.values())
    rows = [
        PaddingRow(c, padded[c], total[c],
                   100.0 * padded[c] / n_pad if n_pad else 0.0,
                   100.0 * total[c] / n_all)
        for c in CLASSES
    ]
    rows.append(PaddingRow("Total", n_pad, n_all, 100.0 * n_pad / n_all, 100.0))
    return rows


def write_padding_report(rows: list[PaddingRow], path, length: int = DEFAULT_LENGTH) -> None:
    """CSV laid out like the classic table: one column per class, one row per statistic.

    The ``Total`` column's padded-share cell holds the padded fraction of the whole
    dataset; its total-share cell is left as ``-``.
    """
    by = {r.label: r for r in rows}
    cols = ["A", "N", "O", "~", "Total"]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + cols)
        w.writerow([f"Shorter than {length} (padded)"] + [by[c].padded_count for c in cols])
        w.writerow(["Total in dataset"] + [by[c].total_count for c in cols])
        w.writerow(["Distribution of padded data"] + [f"{by[c].padded_share:.2f}%" for c in cols])
        w.writerow(["Total distribution"] + [f"{by[c].total_share:.2f}%" for c in cols[:-1]] + ["-"])


def largest_remainder(n: int, fractions) -> list[int]:
    """Integer allocation of ``n`` summing exactly to ``n``; ties go to the earlier slot.

    Quotas use the exact decimal value of each fraction; float products such as
    0.7 * 10 would otherwise leak spurious remainders into the tie-break.
    """
    quotas = [n * Fraction(str(f)) for f in fractions]
    counts = [math.floor(q) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _class_indices(labels: np.ndarray) -> dict[int, np.ndarray]:
    return {c: np.flatnonzero(labels == c) for c in range(len(CLASSES))}


def stratified_split(dataset: Dataset, spec: SplitSpec = SplitSpec()):
    """Split into (train, val, test) index arrays with per-class proportions preserved."""
    labels = dataset.labels if isinstance(dataset, Dataset) else np.asarray(dataset)
    rng = Rng(spec.seed)
    parts: list[list[int]] = [[], [], []]
    for c, idx in _class_indices(labels).items():
        if len(idx) == 0:
            continue
        if len(idx) < 3:
            raise StratificationError(
                f"class {CLASSES[c]!r} has {len(idx)} records; need at least 3 to stratify")
        idx = idx[rng.spawn(f"split:{c}").permutation(len(idx))]
        counts = largest_remainder(len(idx), spec.fractions)
        start = 0
        for p, n in enumerate(counts):
            parts[p].extend(idx[start:start + n].tolist())
            start += n
    return tuple(np.array(sorted(p), dtype=np.int64) for p in parts)


def kfold_split(dataset: Dataset, k: int, seed: int = 0):
    """Stratified k folds as a list of (train_idx, test_idx).

    Records of each class are shuffled and dealt round-robin, the dealer position
    carrying over from one class to the next so fold sizes stay within one.
    """
    if k < 2:
        raise ValidationError("k must be >= 2")
    labels = dataset.labels if isinstance(dataset, Dataset) else np.asarray(dataset)
    rng = Rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    pos = 0
    for c, idx in _class_indices(labels).items():
        if len(idx) == 0:
            continue
        if len(idx) < k:
            raise StratificationError(
                f"class {CLASSES[c]!r} has {len(idx)} records; need at least k={k}")
        idx = idx[rng.spawn(f"kfold:{c}").permutation(len(idx))]
        for i in idx:
            folds[pos % k].append(int(i))
            pos += 1
    everything = np.arange(len(labels))
    out = []
    for f in folds:
        test = np.array(sorted(f), dtype=np.int64)
        train = np.setdiff1d(everything, test)
        out.append((train, test))
    return out
