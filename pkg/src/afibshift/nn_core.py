"""Small numpy layer engine: 1D conv, max-pool, dense, ReLU/softmax, exact backprop, SGD.

Tensors are plain ``numpy.ndarray`` values. Batched layouts are ``(N, C, L)``
for feature maps and ``(N, D)`` for dense activations; the single-sample
functions also accept ``(C, L)`` / ``(D,)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, ValidationError
from .rng import Rng

CE_EPS = 1e-12

Padding = Literal["same_zero", "valid"]


@dataclass
class ParamSet:
    """Named parameter tensors plus optional binary masks (1 trainable, 0 frozen at zero)."""

    values: dict[str, np.ndarray]
    masks: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, m in self.masks.items():
            if m.shape != self.values[name].shape:
                raise DimensionError(f"mask shape {m.shape} != tensor shape for {name}")

    def __getitem__(self, name):
        return self.values[name]

    def names(self) -> list[str]:
        return list(self.values)

    def weight_names(self) -> list[str]:
        return [n for n, v in self.values.items() if v.ndim > 1]

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.values.items()},
                        {k: m.copy() for k, m in self.masks.items()})

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({k: v.astype(dtype) for k, v in self.values.items()},
                        {k: m.copy() for k, m in self.masks.items()})

    def apply_masks(self) -> None:
        for name, m in self.masks.items():
            self.values[name] *= m.astype(self.values[name].dtype)

    def n_elements(self) -> int:
        return int(sum(v.size for v in self.values.values()))


# --- layers ----------------------------------------------------------------

def _pad_amounts(k: int, padding: Padding) -> tuple[int, int]:
    if padding == "same_zero":
        left = (k - 1) // 2
        return left, k - 1 - left
    if padding == "valid":
        return 0, 0
    raise ValidationError(f"unknown padding {padding!r}")


def _as_batch(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise DimensionError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def conv1d_forward(x, weights, bias, padding: Padding = "same_zero"):
    """Stride-1 cross-correlation: ``out[o, t] = b[o] + sum_{c,k} w[o, c, k] * xpad[c, t + k]``."""
    xb, single = _as_batch(x, 2)
    c_out, c_in, k = weights.shape
    if xb.shape[1] != c_in:
        raise DimensionError(f"conv expects {c_in} input channels, got {xb.shape[1]}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv bias shape {bias.shape} != ({c_out},)")
    left, right = _pad_amounts(k, padding)
    if k > xb.shape[2] + left + right:
        raise DimensionError(f"kernel {k} longer than padded input {xb.shape[2] + left + right}")
    xp = np.pad(xb, ((0, 0), (0, 0), (left, right))) if left or right else xb
    win = sliding_window_view(xp, k, axis=2)  # (N, C_in, L_out, K)
    out = np.tensordot(win, weights, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    out = out + bias[None, :, None]
    return out[0] if single else np.ascontiguousarray(out)


def conv1d_backward(dout, x, weights, padding: Padding = "same_zero"):
    """Gradients (dx, dw, db) of a batched conv1d given upstream ``dout`` (N, C_out, L_out)."""
    k = weights.shape[2]
    left, right = _pad_amounts(k, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (left, right))) if left or right else x
    win = sliding_window_view(xp, k, axis=2)
    dw = np.tensordot(dout, win, axes=([0, 2], [0, 2]))
    db = dout.sum(axis=(0, 2))
    l_out = dout.shape[2]
    dxp = np.zeros_like(xp)
    for j in range(k):
        dxp[:, :, j:j + l_out] += np.matmul(weights[:, :, j].T, dout)
    dx = dxp[:, :, left:xp.shape[2] - right] if left or right else dxp
    return dx, dw, db


def maxpool1d_forward(x, window: int):
    """Non-overlapping max-pool; tail samples that do not fill a window are dropped.

    Returns ``(out, argmax)`` where argmax holds input positions, first maximum on ties.
    """
    if window < 1:
        raise ValidationError("pool window must be >= 1")
    xb, single = _as_batch(x, 2)
    n, c, length = xb.shape
    lp = length // window
    xr = xb[:, :, :lp * window].reshape(n, c, lp, window)
    am = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, am[..., None], axis=-1)[..., 0]
    pos = am + (np.arange(lp) * window)[None, None, :]
    if single:
        return out[0], pos[0]
    return out, pos


def maxpool1d_backward(dout, argmax, input_length: int):
    n, c, _ = dout.shape
    dx = np.zeros((n, c, input_length), dtype=dout.dtype)
    np.put_along_axis(dx, argmax, dout, axis=2)
    return dx


def dense_forward(x, weights, bias):
    """``out[u] = sum_d w[u, d] * x[d] + b[u]``."""
    xb, single = _as_batch(x, 1)
    u, d = weights.shape
    if xb.shape[1] != d:
        raise DimensionError(f"dense expects {d} inputs, got {xb.shape[1]}")
    if bias.shape != (u,):
        raise DimensionError(f"dense bias shape {bias.shape} != ({u},)")
    out = xb @ weights.T + bias
    return out[0] if single else out


def activation(x, kind: Literal["relu", "softmax"]):
    x = np.asarray(x)
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "softmax":
        if x.ndim not in (1, 2):
            raise DimensionError("softmax takes a vector (or a batch of vectors)")
        z = np.exp(x - x.max(axis=-1, keepdims=True))
        return z / z.sum(axis=-1, keepdims=True)
    raise ValidationError(f"unknown activation {kind!r}")


def cross_entropy_loss(probs, label) -> float:
    """``-ln(max(p[label], 1e-12))``; batched input gives the batch mean."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 1:
        return float(-np.log(max(p[int(label)], CE_EPS)))
    label = np.asarray(label)
    picked = p[np.arange(len(label)), label]
    return float(np.mean(-np.log(np.maximum(picked, CE_EPS))))


# --- layer graph -----------------------------------------------------------

@dataclass(frozen=True)
class Layer:
    """One node of the sequential graph.

    ``kind`` is conv | dense | relu | pool | flatten | softmax; parametrized kinds
    use the ``<name>.weight`` / ``<name>.bias`` tensors.
    """

    kind: str
    name: str = ""
    padding: Padding = "same_zero"
    window: int = 1


def _check_finite(v: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(v)):
        raise NumericError(f"non-finite value in forward pass at layer {where}")


def forward(layers: Sequence[Layer], params: ParamSet, x: np.ndarray, keep_cache: bool = False,
            taps: list | None = None):
    """Run the graph on a batch ``x`` of shape (N, C, L). Returns probabilities (N, n_classes).

    With ``keep_cache`` the per-layer inputs needed for backprop are returned too.
    ``taps`` collects every post-ReLU activation when given a list.
    """
    cache = []
    h = x
    for i, layer in enumerate(layers):
        inp = h
        extra = None
        if layer.kind == "conv":
            h = conv1d_forward(h, params[layer.name + ".weight"], params[layer.name + ".bias"], layer.padding)
        elif layer.kind == "dense":
            h = dense_forward(h, params[layer.name + ".weight"], params[layer.name + ".bias"])
        elif layer.kind == "relu":
            h = np.maximum(h, 0)
            if taps is not None:
                taps.append(h)
        elif layer.kind == "pool":
            h, extra = maxpool1d_forward(h, layer.window)
        elif layer.kind == "flatten":
            h = h.reshape(h.shape[0], -1)
        elif layer.kind == "softmax":
            h = activation(h, "softmax")
        else:
            raise ValidationError(f"unknown layer kind {layer.kind!r}")
        _check_finite(h, layer.name or f"{i}:{layer.kind}")
        if keep_cache:
            cache.append((inp, extra))
    return (h, cache) if keep_cache else h


def backprop_grads(layers: Sequence[Layer], params: ParamSet, x: np.ndarray, labels: np.ndarray,
                   return_probs: bool = False):
    """Mean cross-entropy over the batch and its exact gradient for every tensor.

    The graph must end in softmax; its gradient is fused with the loss
    (``probs - onehot``). Masked entries get gradient 0.
    """
    if len(x) == 0:
        raise ValidationError("empty batch")
    labels = np.asarray(labels, dtype=np.int64)
    probs, cache = forward(layers, params, x, keep_cache=True)
    loss = cross_entropy_loss(probs, labels)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    if layers[-1].kind != "softmax":
        raise ValidationError("graph must end with softmax")
    n = len(labels)
    g = probs.copy()
    g[np.arange(n), labels] -= 1
    g /= n
    grads: dict[str, np.ndarray] = {}
    for layer, (inp, extra) in zip(reversed(layers[:-1]), reversed(cache[:-1])):
        if layer.kind == "dense":
            w = params[layer.name + ".weight"]
            grads[layer.name + ".weight"] = g.T @ inp
            grads[layer.name + ".bias"] = g.sum(axis=0)
            g = g @ w
        elif layer.kind == "conv":
            w = params[layer.name + ".weight"]
            g, dw, db = conv1d_backward(g, inp, w, layer.padding)
            grads[layer.name + ".weight"] = dw
            grads[layer.name + ".bias"] = db
        elif layer.kind == "relu":
            g = g * (inp > 0)
        elif layer.kind == "pool":
            g = maxpool1d_backward(g, extra, inp.shape[2])
        elif layer.kind == "flatten":
            g = g.reshape(inp.shape)
    for name, m in params.masks.items():
        grads[name] = grads[name] * m
    grads = {name: grads[name].astype(params[name].dtype, copy=False) for name in params.names()}
    if return_probs:
        return loss, grads, probs
    return loss, grads


def sgd_step(params: ParamSet, grads: dict[str, np.ndarray], lr: float, weight_decay: float = 0.0) -> ParamSet:
    """``w <- (w - lr * (g + wd * w)) * mask``; biases (rank-1 tensors) skip the decay term."""
    if lr < 0:
        raise ValidationError("learning rate must be >= 0")
    if weight_decay < 0:
        raise ValidationError("weight decay must be >= 0")
    new = {}
    for name, w in params.values.items():
        g = grads[name]
        if w.ndim > 1 and weight_decay:
            g = g + weight_decay * w
        w = w - lr * g
        if name in params.masks:
            w = w * params.masks[name].astype(w.dtype)
        new[name] = w.astype(params[name].dtype, copy=False)
    return ParamSet(new, {k: m.copy() for k, m in params.masks.items()})


def glorot_uniform(shape: tuple[int, ...], rng: Rng, dtype=np.float32) -> np.ndarray:
    if len(shape) == 3:
        c_out, c_in, k = shape
        fan_in, fan_out = c_in * k, c_out * k
    else:
        fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape))
    return rng.uniform(n, -bound, bound).reshape(shape).astype(dtype)
