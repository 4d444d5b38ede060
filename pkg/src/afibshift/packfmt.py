"""SQNZ: bit-exact container for pruned, log-quantized models.

Layout (all integers little-endian)::

    "SQNZ" | version u8 | arch_len u32 | arch JSON (utf-8) | n_tensors u16
    per tensor:
      name_len u16 | name (utf-8) | rank u8 | dims u32 * rank
      scheme u8 | payload_len u32 | payload

Scheme 0 (DENSE_F32) stores float32 values. Scheme 1 (SPARSE_RLE4) stores a
nibble stream, high nibble first within each byte: for every nonzero, a run of
preceding zeros then a code nibble ``sign << 3 | E`` (sign 1 = negative). A run
nibble of 15 means "15 zeros, and another run nibble follows", so a run r is
written as ``r // 15`` fifteens and then ``r % 15``. Zeros after the last
nonzero are written as a final run with no code; the element count from the
shape ends decoding and an odd stream is padded with a zero nibble.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .afib_model import ArchConfig, Model, build_layers
from .errors import (BadMagicError, EncodingError, FormatError, TrailingBytesError, TruncatedError,
                     UnsupportedVersionError)
from .nn_core import ParamSet
from .quantize import QuantConfig, QuantizedTensor, on_grid, quantize_array

MAGIC = b"SQNZ"
VERSION = 1
RLE_EMAX = 7
RLE_CFG = QuantConfig(3)


class Scheme(IntEnum):
    DENSE_F32 = 0
    SPARSE_RLE4 = 1


@dataclass
class TensorRecord:
    name: str
    shape: tuple[int, ...]
    scheme: Scheme
    values: np.ndarray  # float32
    codes: QuantizedTensor | None = None


@dataclass
class PackedModel:
    arch: ArchConfig
    tensors: dict[str, TensorRecord]

    @property
    def values(self) -> dict[str, np.ndarray]:
        return {k: t.values for k, t in self.tensors.items()}

    @property
    def codes(self) -> dict[str, QuantizedTensor | None]:
        return {k: t.codes for k, t in self.tensors.items()}

    def to_model(self) -> Model:
        layers, _ = build_layers(self.arch)
        return Model(self.arch, layers, ParamSet({k: v.copy() for k, v in self.values.items()}))


# --- nibble stream ---------------------------------------------------------

def _emit_run(nibbles: list[int], run: int) -> None:
    while run >= 15:
        nibbles.append(15)
        run -= 15
    nibbles.append(run)


def rle4_nibbles(codes: QuantizedTensor) -> list[int]:
    sign = codes.sign.ravel()
    E = codes.exponent.ravel()
    nibbles: list[int] = []
    prev = 0
    for i in np.flatnonzero(sign):
        _emit_run(nibbles, int(i) - prev)
        nibbles.append((8 if sign[i] < 0 else 0) | int(E[i]))
        prev = int(i) + 1
    if sign.size - prev > 0:
        _emit_run(nibbles, sign.size - prev)
    return nibbles


def encode_rle4(codes: QuantizedTensor) -> bytes:
    if codes.sign.size and int(codes.exponent[codes.sign != 0].max(initial=0)) > RLE_EMAX:
        raise EncodingError("exponent does not fit the 3-bit code field")
    nib = rle4_nibbles(codes)
    if len(nib) % 2:
        nib.append(0)
    arr = np.asarray(nib, dtype=np.uint8).reshape(-1, 2)
    return ((arr[:, 0] << 4) | arr[:, 1]).astype(np.uint8).tobytes()


def decode_rle4(payload: bytes, n: int) -> QuantizedTensor:
    raw = np.frombuffer(payload, dtype=np.uint8)
    nib = np.empty(raw.size * 2, dtype=np.uint8)
    nib[0::2] = raw >> 4
    nib[1::2] = raw & 0xF
    nib = nib.tolist()
    sign = np.zeros(n, dtype=np.int8)
    E = np.zeros(n, dtype=np.int64)
    pos = count = 0
    total = len(nib)

    def read() -> int:
        nonlocal pos
        if pos >= total:
            raise TruncatedError("truncated tensor payload")
        v = nib[pos]
        pos += 1
        return v

    while count < n:
        while True:
            v = read()
            count += v
            if v != 15:
                break
        if count > n:
            raise FormatError("zero run overruns tensor length")
        if count == n:
            break
        c = read()
        sign[count] = -1 if c & 8 else 1
        E[count] = c & 7
        count += 1
    used = (pos + 1) // 2
    if len(payload) > used:
        raise TrailingBytesError("trailing bytes after run-length stream")
    if pos % 2 and nib[pos] != 0:
        raise FormatError("nonzero pad nibble")
    return QuantizedTensor(sign, E)


# --- container -------------------------------------------------------------

def _codes_for(name: str, values: np.ndarray) -> QuantizedTensor:
    ok = on_grid(values, RLE_CFG)
    if not ok.all():
        idx = int(np.flatnonzero(~ok.ravel())[0])
        raise EncodingError(
            f"tensor {name!r} index {idx}: value {values.ravel()[idx]!r} is not on the 3-bit log grid")
    return quantize_array(values, RLE_CFG)


def pack(model: Model, scheme: Scheme | dict[str, Scheme] = Scheme.SPARSE_RLE4) -> bytes:
    """Serialize ``model``; ``scheme`` may be one scheme for all tensors or a per-tensor map."""
    arch = model.config.to_json().encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<BI", VERSION, len(arch)) + arch
    out += struct.pack("<H", len(model.params.values))
    for name, v in model.params.values.items():
        sch = Scheme(scheme[name] if isinstance(scheme, dict) else scheme)
        if sch == Scheme.SPARSE_RLE4:
            payload = encode_rle4(_codes_for(name, v))
        else:
            payload = np.asarray(v, dtype="<f4").tobytes()
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", v.ndim) + struct.pack(f"<{v.ndim}I", *v.shape)
        out += struct.pack("<BI", int(sch), len(payload)) + payload
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(f"truncated {what}")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def unpack(data: bytes) -> PackedModel:
    r = _Reader(bytes(data))
    if r.take(4, "header") != MAGIC:
        raise BadMagicError("bad magic")
    version, arch_len = r.unpack("<BI", "header")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported SQNZ version {version}")
    try:
        arch = ArchConfig.from_json(r.take(arch_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad architecture blob: {exc}") from None
    (count,) = r.unpack("<H", "header")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "tensor header")
        name = r.take(nlen, "tensor header").decode("utf-8")
        (rank,) = r.unpack("<B", "tensor header")
        shape = tuple(r.unpack(f"<{rank}I", "tensor header"))
        sch, plen = r.unpack("<BI", "tensor header")
        payload = r.take(plen, "tensor payload")
        n = math.prod(shape)
        if sch == Scheme.DENSE_F32:
            if plen != 4 * n:
                raise FormatError(f"tensor {name!r}: dense payload is {plen} bytes, expected {4 * n}")
            values = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
            tensors[name] = TensorRecord(name, shape, Scheme.DENSE_F32, values)
        elif sch == Scheme.SPARSE_RLE4:
            codes = decode_rle4(payload, n)
            codes = QuantizedTensor(codes.sign.reshape(shape), codes.exponent.reshape(shape))
            tensors[name] = TensorRecord(name, shape, Scheme.SPARSE_RLE4, codes.values(np.float32), codes)
        else:
            raise FormatError(f"tensor {name!r}: unknown scheme {sch}")
    if r.pos != len(r.data):
        raise TrailingBytesError(f"{len(r.data) - r.pos} trailing bytes after last tensor")
    _, shapes = build_layers(arch)
    if {k: t.shape for k, t in tensors.items()} != shapes:
        raise FormatError("tensor set does not match the embedded architecture")
    return PackedModel(arch, tensors)


def size_report(model: Model, scheme: Scheme = Scheme.SPARSE_RLE4) -> dict:
    """Dense float32 size vs the real container size vs 4 bits per nonzero (indices free)."""
    n = model.params.n_elements()
    nnz = sum(int(np.count_nonzero(v)) for v in model.params.values.values())
    dense = 4 * n
    packed = len(pack(model, scheme))
    value_only = math.ceil(4 * nnz / 8)
    return {
        "elements": n,
        "nonzeros": nnz,
        "dense_f32_bytes": dense,
        "packed_bytes": packed,
        "value_only_bytes": value_only,
        "ratio_packed": dense / packed,
        "ratio_value_only": dense / value_only if value_only else None,
    }
