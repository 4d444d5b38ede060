"""Integer inference over a packed model: adds, subtracts and arithmetic shifts only.

Feature maps are fixed point, ``real = v / 2**frac_bits``. A weight ``±2**-E``
contributes ``±(x << (Emax - E))`` to a wide accumulator, i.e. every term is
held at scale ``2**(frac_bits + Emax)``. Biases are converted at that same
scale so they add exactly. Each layer output is then brought back to
``frac_bits`` with one rounding shift, ``(acc + 2**(Emax-1)) >> Emax``.

Accumulators are int64. With L <= 18000, C <= 128, frac_bits <= 12 and Emax <= 7
a standardized input (|x| below a few hundred) stays many bits clear of 2**63;
every layer checks a worst-case bound before it runs and raises RangeError
instead of wrapping.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, RangeError, ValidationError
from .packfmt import RLE_EMAX, PackedModel, _codes_for, unpack
from .quantize import QuantizedTensor, QuantizedWeight

ACC_BITS = 64
ACC_LIMIT = 1 << (ACC_BITS - 1)


@dataclass
class FixedMap:
    values: np.ndarray  # int64
    frac_bits: int = 8

    def to_real(self) -> np.ndarray:
        return to_real(self.values, self.frac_bits)


def to_fixed(x, frac_bits: int = 8) -> np.ndarray:
    """``round_half_even(x * 2**frac_bits)`` as int64."""
    scaled = np.asarray(x, dtype=np.float64) * float(1 << frac_bits)
    if not np.all(np.isfinite(scaled)) or np.any(np.abs(scaled) >= ACC_LIMIT):
        raise RangeError(f"value does not fit a {ACC_BITS}-bit fixed-point word at frac_bits={frac_bits}")
    return np.rint(scaled).astype(np.int64)


def to_real(v, frac_bits: int = 8) -> np.ndarray:
    return np.asarray(v, dtype=np.float64) / float(1 << frac_bits)


@dataclass
class MacCounter:
    executed: int = 0
    skipped: int = 0


def shift_mac(acc: int, x: int, code: QuantizedWeight, emax: int, counter: MacCounter | None = None) -> int:
    """One multiply-accumulate done as a shift. Zero weights are skipped."""
    if code.kind == "zero":
        if counter is not None:
            counter.skipped += 1
        return acc
    if not 0 <= code.E <= emax:
        raise ValidationError(f"exponent {code.E} outside 0..{emax}")
    term = int(x) << (emax - code.E)
    acc = acc + term if code.sign > 0 else acc - term
    if not -ACC_LIMIT <= acc < ACC_LIMIT:
        raise RangeError("accumulator overflow")
    if counter is not None:
        counter.executed += 1
    return acc


def requantize(acc: np.ndarray, emax: int) -> np.ndarray:
    """Drop ``emax`` fractional bits, rounding half up via offset-then-floor."""
    if emax == 0:
        return acc
    return (acc + (1 << (emax - 1))) >> emax


def _shift_planes(codes: QuantizedTensor, emax: int):
    """Split weights into ±1 planes per shift amount: w = sum_s plane_s * 2**s."""
    shift = emax - codes.exponent
    for s in range(emax + 1):
        plane = np.where((codes.sign != 0) & (shift == s), codes.sign, 0).astype(np.int64)
        if plane.any():
            yield s, plane


def _check_bound(x: np.ndarray, codes: QuantizedTensor, bias: np.ndarray, emax: int, axes, where: str):
    mag = np.where(codes.sign != 0, np.left_shift(1, (emax - codes.exponent).astype(np.int64)), 0)
    row = int(mag.sum(axis=axes).max(initial=0))
    worst = int(np.abs(x).max(initial=0)) * row + int(np.abs(bias).max(initial=0)) + (1 << emax)
    if worst >= ACC_LIMIT:
        raise RangeError(f"accumulator may overflow in layer {where}")


def conv_accumulate(x: np.ndarray, codes: QuantizedTensor, emax: int, padding: str = "same_zero") -> np.ndarray:
    """Exact pre-shift accumulator ``sum x * 2**(emax - E) * sign`` for a conv layer, (C_out, L_out)."""
    c_out, c_in, k = codes.shape
    if x.shape[0] != c_in:
        raise DimensionError(f"conv expects {c_in} input channels, got {x.shape[0]}")
    left = (k - 1) // 2 if padding == "same_zero" else 0
    right = k - 1 - left if padding == "same_zero" else 0
    xp = np.pad(x, ((0, 0), (left, right)))
    win = sliding_window_view(xp, k, axis=1)  # (C_in, L_out, K)
    acc = np.zeros((c_out, win.shape[1]), dtype=np.int64)
    for s, plane in _shift_planes(codes, emax):
        acc += np.tensordot(plane, win, axes=([1, 2], [0, 2])) << s
    return acc


def dense_accumulate(x: np.ndarray, codes: QuantizedTensor, emax: int) -> np.ndarray:
    u, d = codes.shape
    if x.shape[0] != d:
        raise DimensionError(f"dense expects {d} inputs, got {x.shape[0]}")
    acc = np.zeros(u, dtype=np.int64)
    for s, plane in _shift_planes(codes, emax):
        acc += (plane @ x) << s
    return acc


def _maxpool_int(x: np.ndarray, window: int) -> np.ndarray:
    c, length = x.shape
    lp = length // window
    return x[:, :lp * window].reshape(c, lp, window).max(axis=2)


@dataclass
class OpReport:
    macs_executed: int = 0
    macs_skipped_zero_weight: int = 0
    per_layer: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"macs_executed": self.macs_executed,
                "macs_skipped_zero_weight": self.macs_skipped_zero_weight,
                "per_layer": self.per_layer}


def _layer_codes(packed: PackedModel, name: str) -> QuantizedTensor:
    rec = packed.tensors[name]
    return rec.codes if rec.codes is not None else _codes_for(name, rec.values)


def quantized_logits(packed: PackedModel | bytes, x, frac_bits: int = 8, emax: int = RLE_EMAX):
    """Integer forward pass. Returns (logits as fixed-point ints, OpReport)."""
    if isinstance(packed, (bytes, bytearray)):
        packed = unpack(packed)
    arch = packed.arch
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape != (arch.in_channels, arch.input_length):
        raise DimensionError(f"input shape {x.shape} does not match model input "
                             f"({arch.in_channels}, {arch.input_length})")
    h = to_fixed(x, frac_bits)
    bias_scale = frac_bits + emax
    report = OpReport()

    def account(name, codes, uses):
        nz = int(np.count_nonzero(codes.sign))
        zero = codes.sign.size - nz
        report.macs_executed += nz * uses
        report.macs_skipped_zero_weight += zero * uses
        report.per_layer.append({"layer": name, "macs_executed": nz * uses,
                                 "macs_skipped_zero_weight": zero * uses})

    for i, spec in enumerate(arch.conv_layers):
        name = f"conv{i}"
        w = _layer_codes(packed, name + ".weight")
        b = to_fixed(packed.tensors[name + ".bias"].values, bias_scale)
        _check_bound(h, w, b, emax, (1, 2), name)
        acc = conv_accumulate(h, w, emax) + b[:, None]
        h = np.maximum(requantize(acc, emax), 0)
        account(name, w, acc.shape[1])
        if spec.pool_after:
            h = _maxpool_int(h, spec.pool_window)
    h = h.reshape(-1)
    n_dense = len(arch.dense_layers)
    for j in range(n_dense):
        name = f"dense{j}"
        w = _layer_codes(packed, name + ".weight")
        b = to_fixed(packed.tensors[name + ".bias"].values, bias_scale)
        _check_bound(h, w, b, emax, 1, name)
        h = requantize(dense_accumulate(h, w, emax) + b, emax)
        if j < n_dense - 1:
            h = np.maximum(h, 0)
        account(name, w, 1)
    return h, report


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def quantized_forward(packed: PackedModel | bytes, x, frac_bits: int = 8, emax: int = RLE_EMAX):
    """Class probabilities from the integer pipeline plus the MAC accounting."""
    logits, report = quantized_logits(packed, x, frac_bits, emax)
    return softmax(to_real(logits, frac_bits)), report


def logit_error_bound(packed: PackedModel, frac_bits: int) -> float:
    """Worst-case |integer logits - exact logits| in real units.

    Input rounding and each layer's output rounding contribute half an LSB;
    linear layers amplify incoming error by their max absolute row sum; ReLU
    and max-pool do not amplify it.
    """
    half = 2.0 ** -(frac_bits + 1)
    err = half
    names = [f"conv{i}" for i in range(len(packed.arch.conv_layers))]
    names += [f"dense{j}" for j in range(len(packed.arch.dense_layers))]
    for name in names:
        w = np.abs(packed.tensors[name + ".weight"].values.astype(np.float64))
        row = w.reshape(w.shape[0], -1).sum(axis=1).max(initial=0.0)
        err = row * err + half
    return float(err)


def exact_accumulator(x_ints, signs, exponents, emax: int) -> int:
    """Python-int reference: ``sum sign_i * x_i * 2**(emax - E_i)`` over nonzero weights."""
    total = 0
    for xi, s, e in zip(x_ints, signs, exponents):
        if s:
            total += int(s) * int(xi) * (1 << (emax - int(e)))
    return total


def macs_for(packed: PackedModel) -> tuple[int, int]:
    """(executed, skipped) without running the model."""
    zero_input = np.zeros((packed.arch.in_channels, packed.arch.input_length))
    _, rep = quantized_logits(packed, zero_input)
    return rep.macs_executed, rep.macs_skipped_zero_weight

