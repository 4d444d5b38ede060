"""Base-2 logarithmic weight quantization with clip-to-zero.

A weight is stored as zero or as ``sign * 2**-E`` with ``0 <= E <= Emax(b) = 2**b - 1``.
Rounding happens on ``e = -log2|w|`` (half away from zero); weights whose ``e``
exceeds ``Emax + 0.5`` are clipped to zero and magnitudes above 1 saturate at E=0.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .afib_model import Model, weight_sparsity
from .errors import ValidationError
from .nn_core import ParamSet
from .train import Hyperparams, evaluate, train


@dataclass(frozen=True)
class QuantConfig:
    b: int = 3
    clip_margin: float = 0.5

    def __post_init__(self):
        if self.b < 2:
            raise ValidationError("exponent bit-width b must be >= 2")

    @property
    def emax(self) -> int:
        return emax(self.b)


def emax(b: int) -> int:
    return (1 << b) - 1


@dataclass(frozen=True)
class QuantizedWeight:
    kind: Literal["zero", "pow2"]
    sign: int = 0
    E: int = 0

    @property
    def value(self) -> float:
        return 0.0 if self.kind == "zero" else self.sign * math.ldexp(1.0, -self.E)


@dataclass
class QuantizedTensor:
    """Codes for a whole tensor. ``sign`` is -1/0/+1 (0 marks a zero weight);
    ``exponent`` is E where nonzero and 0 elsewhere."""

    sign: np.ndarray
    exponent: np.ndarray

    @property
    def shape(self):
        return self.sign.shape

    def values(self, dtype=np.float64) -> np.ndarray:
        return (self.sign * np.ldexp(1.0, -self.exponent.astype(np.int32))).astype(dtype)


def _round_half_away(e: np.ndarray) -> np.ndarray:
    return np.sign(e) * np.floor(np.abs(e) + 0.5)


def quantize_array(w, cfg: QuantConfig = QuantConfig()) -> QuantizedTensor:
    w = np.asarray(w, dtype=np.float64)
    top = cfg.emax
    mag = np.abs(w)
    nz = mag > 0
    with np.errstate(divide="ignore"):
        e = np.where(nz, -np.log2(np.where(nz, mag, 1.0)), np.inf)
    keep = nz & (e <= top + cfg.clip_margin)
    E = np.clip(_round_half_away(np.where(keep, e, 0.0)), 0, top).astype(np.int64)
    sign = np.where(keep, np.sign(w), 0).astype(np.int8)
    return QuantizedTensor(sign, np.where(keep, E, 0))


def log_quantize_value(w: float, cfg: QuantConfig = QuantConfig()) -> QuantizedWeight:
    if not math.isfinite(w):
        raise ValidationError("cannot quantize a non-finite weight")
    q = quantize_array(np.array([w]), cfg)
    s = int(q.sign[0])
    return QuantizedWeight("zero") if s == 0 else QuantizedWeight("pow2", s, int(q.exponent[0]))


def quantize_values(w, cfg: QuantConfig = QuantConfig()) -> np.ndarray:
    """Quantized real values, same dtype as the input."""
    w = np.asarray(w)
    return quantize_array(w, cfg).values(w.dtype)


def on_grid(w, cfg: QuantConfig = QuantConfig()) -> np.ndarray:
    """Elementwise: is the value exactly 0 or ±2**-E with E <= Emax?"""
    w = np.asarray(w, dtype=np.float64)
    mant, ex = np.frexp(np.abs(w))  # |w| = mant * 2**ex, mant in [0.5, 1)
    E = 1 - ex
    return (w == 0) | ((mant == 0.5) & (E >= 0) & (E <= cfg.emax))


def quantize_params(params: ParamSet, cfg: QuantConfig = QuantConfig()) -> ParamSet:
    out = ParamSet({k: quantize_values(v, cfg) for k, v in params.values.items()},
                   {k: m.copy() for k, m in params.masks.items()})
    out.apply_masks()
    return out


def quantize_model(model: Model, cfg: QuantConfig = QuantConfig()) -> tuple[Model, dict[str, QuantizedTensor]]:
    """Replace every weight and bias by its quantized value; also return the codes."""
    params = quantize_params(model.params, cfg)
    codes = {k: quantize_array(v, cfg) for k, v in params.values.items()}
    return model.with_params(params), codes


def qat_train(model: Model, cfg: QuantConfig, train_set, val_set, hp: Hyperparams = Hyperparams(),
              seed: int = 0) -> Model:
    """Straight-through training: shadows stay full precision, the forward pass sees
    their quantized projection. The returned model holds quantized values."""
    fitted, _ = train(model, train_set, val_set, hp, seed, project=lambda p: quantize_params(p, cfg))
    return fitted


@dataclass
class SweepRow:
    b: int
    accuracy: float
    model_sparsity: float
    value_only_bytes: int
    packed_bytes: int | None


def sweep_bitwidths(model: Model, bs, train_set, val_set, test_set,
                    hp: Hyperparams = Hyperparams(), seed: int = 0) -> list[SweepRow]:
    """QAT from the same starting model for each b, scored on ``test_set``.

    ``value_only_bytes`` counts (b + 1) bits per nonzero; ``packed_bytes`` is the
    SQNZ container size when the codes fit its 3-bit exponent field, else None.
    """
    from .packfmt import Scheme, pack

    bs = list(bs)
    if not bs:
        raise ValidationError("bit-width list is empty")
    rows = []
    for b in bs:
        cfg = QuantConfig(b)
        q = qat_train(model, cfg, train_set, val_set, hp, seed)
        _, acc = evaluate(q, *test_set)
        nnz = sum(int(np.count_nonzero(v)) for v in q.params.values.values())
        packed = len(pack(q, Scheme.SPARSE_RLE4)) if b <= 3 else None
        rows.append(SweepRow(b, acc, weight_sparsity(q), math.ceil(nnz * (b + 1) / 8), packed))
    return rows


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["b", "accuracy", "model_sparsity", "value_only_bytes", "packed_bytes"])
        for r in rows:
            w.writerow([r.b, f"{r.accuracy:.6f}", f"{r.model_sparsity:.6f}", r.value_only_bytes,
                        "" if r.packed_bytes is None else r.packed_bytes])
