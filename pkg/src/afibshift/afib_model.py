"""Declarative CNN architecture, model construction, and size/sparsity statistics."""
from __future__ import annotations

import json
import math
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import N_CLASSES
from .errors import ArchitectureError, ValidationError
from .nn_core import Layer, ParamSet, forward, glorot_uniform
from .rng import Rng


@dataclass(frozen=True)
class ConvSpec:
    channels: int = 128
    kernel_size: int = 7
    pool_after: bool = False
    pool_window: int = 5


@dataclass(frozen=True)
class DenseSpec:
    units: int


def _default_convs():
    return (ConvSpec(pool_after=True), ConvSpec(pool_after=True), ConvSpec(), ConvSpec())


@dataclass(frozen=True)
class ArchConfig:
    """Defaults: 4 conv layers x 128 channels (K=7), pool(5) after conv1 and conv2,
    dense [64, 4], input length 18000."""

    input_length: int = 18000
    conv_layers: tuple[ConvSpec, ...] = field(default_factory=_default_convs)
    dense_layers: tuple[DenseSpec, ...] = (DenseSpec(64), DenseSpec(N_CLASSES))
    n_classes: int = N_CLASSES
    in_channels: int = 1

    def __post_init__(self):
        if not self.conv_layers or not self.dense_layers:
            raise ArchitectureError("need at least one conv and one dense layer")
        if self.dense_layers[-1].units != self.n_classes:
            raise ArchitectureError("last dense layer must have n_classes units")
        for c in self.conv_layers:
            if c.pool_window < 1 or c.channels < 1 or c.kernel_size < 1:
                raise ArchitectureError(f"invalid conv layer {c}")
        if self.input_length < 1:
            raise ArchitectureError("input_length must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_layers"] = [asdict(c) for c in self.conv_layers]
        d["dense_layers"] = [asdict(u) for u in self.dense_layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        try:
            if "conv_layers" in d:
                d["conv_layers"] = tuple(ConvSpec(**c) for c in d["conv_layers"])
            if "dense_layers" in d:
                d["dense_layers"] = tuple(DenseSpec(**u) for u in d["dense_layers"])
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad architecture config: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ArchConfig":
        return cls.from_dict(json.loads(text))


def load_arch_config(path) -> ArchConfig:
    return ArchConfig.from_json(Path(path).read_text())


@dataclass
class Model:
    config: ArchConfig
    layers: list[Layer]
    params: ParamSet

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 1:
            x = x[None, None, :]
        elif x.ndim == 2:
            x = x[:, None, :]
        out = [forward(self.layers, self.params, x[i:i + batch_size].astype(self.dtype, copy=False))
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.config.n_classes))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)

    @property
    def dtype(self):
        return next(iter(self.params.values.values())).dtype

    def copy(self) -> "Model":
        return Model(self.config, list(self.layers), self.params.copy())

    def with_params(self, params: ParamSet) -> "Model":
        return Model(self.config, list(self.layers), params)


def build_layers(config: ArchConfig) -> tuple[list[Layer], dict[str, tuple[int, ...]]]:
    """Layer graph and parameter shapes (in declaration order) for ``config``."""
    layers: list[Layer] = []
    shapes: dict[str, tuple[int, ...]] = {}
    length, channels = config.input_length, config.in_channels
    for i, c in enumerate(config.conv_layers):
        if length < 1:
            raise ArchitectureError(f"feature map length reaches 0 before conv{i}")
        name = f"conv{i}"
        shapes[name + ".weight"] = (c.channels, channels, c.kernel_size)
        shapes[name + ".bias"] = (c.channels,)
        layers += [Layer("conv", name), Layer("relu", name + ".relu")]
        channels = c.channels
        if c.pool_after:
            layers.append(Layer("pool", name + ".pool", window=c.pool_window))
            length //= c.pool_window
    if length < 1:
        raise ArchitectureError("feature map length reaches 0 before the dense stack")
    layers.append(Layer("flatten", "flatten"))
    width = length * channels
    for j, d in enumerate(config.dense_layers):
        name = f"dense{j}"
        shapes[name + ".weight"] = (d.units, width)
        shapes[name + ".bias"] = (d.units,)
        layers.append(Layer("dense", name))
        if j < len(config.dense_layers) - 1:
            layers.append(Layer("relu", name + ".relu"))
        width = d.units
    layers.append(Layer("softmax", "softmax"))
    return layers, shapes


def build_model(config: ArchConfig = ArchConfig(), seed: int = 0, dtype=np.float32) -> Model:
    """Glorot-uniform weights from the seeded stream, zero biases."""
    layers, shapes = build_layers(config)
    rng = Rng(seed)
    values = {}
    for name, shape in shapes.items():
        if name.endswith(".weight"):
            values[name] = glorot_uniform(shape, rng.spawn(name), dtype)
        else:
            values[name] = np.zeros(shape, dtype=dtype)
    return Model(config, layers, ParamSet(values))


def parameter_count(config: ArchConfig) -> int:
    return sum(math.prod(s) for s in build_layers(config)[1].values())


@dataclass
class SizeReportEntry:
    name: str
    elements: int
    zeros: int
    bytes: int


@dataclass
class SizeReport:
    precision: int
    entries: list[SizeReportEntry]
    total_elements: int
    total_bytes: int

    @property
    def megabytes(self) -> float:
        return self.total_bytes / 1e6


def model_size_bytes(model: Model, precision: int = 32) -> SizeReport:
    """Dense storage cost: ``ceil(elements * precision / 8)`` bytes."""
    if precision not in (4, 32):
        raise ValidationError("precision must be 4 or 32 bits")
    entries = [
        SizeReportEntry(name, int(v.size), int(np.count_nonzero(v == 0)), math.ceil(v.size * precision / 8))
        for name, v in model.params.values.items()
    ]
    total = sum(e.elements for e in entries)
    return SizeReport(precision, entries, total, math.ceil(total * precision / 8))


def weight_sparsity(model: Model) -> float:
    """Fraction of zeros among all weights and biases."""
    vals = model.params.values.values()
    total = sum(v.size for v in vals)
    return float(sum(np.count_nonzero(v == 0) for v in vals) / total) if total else 0.0


def prunable_sparsity(model: Model) -> float:
    """Fraction of zeros among weight tensors only (biases excluded)."""
    names = model.params.weight_names()
    total = sum(model.params[n].size for n in names)
    return float(sum(np.count_nonzero(model.params[n] == 0) for n in names) / total)


def feature_map_sparsity(model: Model, x: np.ndarray, batch_size: int = 128) -> float:
    """Mean over records of the mean over post-ReLU maps of each map's zero fraction.

    Maps are conv and hidden dense activations (before pooling); each map
    weighs equally regardless of its size.
    """
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[:, None, :]
    if len(x) == 0:
        raise ValidationError("feature_map_sparsity needs at least one record")
    per_record = []
    for i in range(0, len(x), batch_size):
        taps: list[np.ndarray] = []
        forward(model.layers, model.params, x[i:i + batch_size].astype(model.dtype, copy=False), taps=taps)
        fracs = np.stack([(t.reshape(t.shape[0], -1) == 0).mean(axis=1) for t in taps], axis=1)
        per_record.append(fracs.mean(axis=1))
    return float(np.concatenate(per_record).mean())


def write_npz(path, arrays: dict[str, np.ndarray]) -> None:
    """``np.load``-compatible archive that is byte-identical for equal inputs."""
    with zipfile.ZipFile(Path(path), "w", zipfile.ZIP_STORED) as zf:
        for k, v in arrays.items():
            # fixed timestamp keeps reruns byte-identical
            with zf.open(zipfile.ZipInfo(k + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(v), allow_pickle=False)


def save_model(model: Model, path) -> None:
    """Write an ``.npz`` with the architecture JSON, every tensor and every mask."""
    arrays = {"arch": np.frombuffer(model.config.to_json().encode("utf-8"), dtype=np.uint8)}
    for k, v in model.params.values.items():
        arrays["param/" + k] = v
    for k, m in model.params.masks.items():
        arrays["mask/" + k] = m
    write_npz(path, arrays)


def load_model(path) -> Model:
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            arch = ArchConfig.from_json(z["arch"].tobytes().decode("utf-8"))
            values = {k[6:]: z[k] for k in z.files if k.startswith("param/")}
            masks = {k[5:]: z[k] for k in z.files if k.startswith("mask/")}
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"cannot read model file {path}: {exc}") from None
    layers, shapes = build_layers(arch)
    if {k: v.shape for k, v in values.items()} != shapes:
        raise ValidationError(f"model file {path}: tensors do not match the stored architecture")
    return Model(arch, layers, ParamSet({k: values[k] for k in shapes}, masks))
