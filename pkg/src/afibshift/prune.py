"""Global magnitude pruning with fine-tuning, and correlation-based filter pruning."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .afib_model import Model, prunable_sparsity, weight_sparsity
from .errors import ValidationError
from .nn_core import ParamSet, forward
from .rng import Rng
from .train import Hyperparams, evaluate, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PruneSchedule:
    sparsity_steps: tuple[float, ...] = (0.5, 0.7, 0.8, 0.9)
    fine_tune_hp: Hyperparams = field(default_factory=lambda: Hyperparams(max_epochs=10, patience=5))

    def __post_init__(self):
        steps = list(self.sparsity_steps)
        if not steps:
            raise ValidationError("empty sparsity schedule")
        if any(not 0 < s < 1 for s in steps):
            raise ValidationError("sparsity targets must lie in (0, 1)")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValidationError("sparsity targets must be strictly increasing")
        if steps[-1] > 0.99:
            raise ValidationError("final sparsity target must be <= 0.99")


def n_to_prune(target: float, total: int) -> int:
    # rounding guards against 0.7 * 10 = 7.000000000000001
    return math.ceil(round(target * total, 9))


def magnitude_prune_step(model: Model, target_sparsity: float) -> Model:
    """Zero and mask the ``ceil(target * N)`` smallest-magnitude weights across all
    conv/dense weight tensors (biases untouched).

    Already-masked entries rank first; remaining ties break by tensor order, then
    flat index. Masks only ever lose ones.
    """
    if not 0 <= target_sparsity < 1:
        raise ValidationError("target sparsity must lie in [0, 1)")
    params = model.params
    names = params.weight_names()
    total = sum(params[n].size for n in names)
    current = prunable_sparsity(model)
    k = n_to_prune(target_sparsity, total)
    if k < round(current * total):
        raise ValidationError(
            f"target sparsity {target_sparsity} is below current weight sparsity {current:.4f}")
    if k == 0:
        return model.copy()
    keys = []
    for n in names:
        mag = np.abs(params[n].astype(np.float64)).ravel()
        if n in params.masks:
            mag = np.where(params.masks[n].ravel() == 0, -1.0, mag)
        keys.append(mag)
    order = np.argsort(np.concatenate(keys), kind="stable")
    keep = np.ones(total, dtype=np.uint8)
    keep[order[:k]] = 0
    new = params.copy()
    start = 0
    for n in names:
        size = params[n].size
        m = keep[start:start + size].reshape(params[n].shape)
        start += size
        if n in new.masks:
            m = m & new.masks[n]
        new.masks[n] = m
    new.apply_masks()
    return model.with_params(new)


@dataclass
class PruneStepReport:
    step: int
    target: float
    weight_sparsity: float
    model_sparsity: float
    val_accuracy: float


def iterative_prune(model: Model, schedule: PruneSchedule, train_set, val_set,
                    seed: int = 0) -> tuple[Model, list[PruneStepReport]]:
    """Alternate a global prune step with fine-tuning of the whole masked model."""
    rng = Rng(seed)
    report = []
    for i, target in enumerate(schedule.sparsity_steps):
        model = magnitude_prune_step(model, target)
        model, _ = train(model, train_set, val_set, schedule.fine_tune_hp, seed=rng.spawn(f"step:{i}").seed)
        _, acc = evaluate(model, *val_set)
        report.append(PruneStepReport(i, target, prunable_sparsity(model), weight_sparsity(model), acc))
        log.info("prune step %d target=%.2f val_acc=%.4f", i, target, acc)
    return model, report


def write_prune_csv(report: list[PruneStepReport], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "target", "achieved_sparsity", "model_sparsity", "val_accuracy"])
        for r in report:
            w.writerow([r.step, r.target, f"{r.weight_sparsity:.6f}", f"{r.model_sparsity:.6f}",
                        f"{r.val_accuracy:.6f}"])


# --- filter pruning ----------------------------------------------------------

def kmeans_pp(points: np.ndarray, k: int, rng: Rng, max_iter: int = 100) -> np.ndarray:
    """Lloyd's k-means with k-means++ seeding. Returns a cluster label per point.

    Distance ties go to the lower cluster index; an emptied cluster keeps its centre.
    """
    n = len(points)
    k = min(k, n)
    centers = [points[int(rng.integers(1, 0, n - 1)[0])]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        if d2.sum() == 0:
            idx = int(rng.integers(1, 0, n - 1)[0])
        else:
            cdf = np.cumsum(d2 / d2.sum())
            idx = min(int(np.searchsorted(cdf, rng.uniform(1)[0], side="right")), n - 1)
        centers.append(points[idx])
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    centers = np.array(centers)
    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = points[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return labels


@dataclass
class FilterPruneLayerReport:
    layer: str
    removed: list[int]
    degenerate: list[int]


def filter_correlation_prune(model: Model, calibration_x: np.ndarray, clusters_k: int, tau: float,
                             seed: int = 0) -> tuple[Model, list[FilterPruneLayerReport]]:
    """Zero out conv filters whose calibration activations duplicate an earlier filter.

    Layer by layer: each filter's post-ReLU activations over the calibration set
    form one vector; vectors are z-scored and clustered with k-means++; inside a
    cluster, a filter whose |Pearson r| with a surviving lower-index filter
    exceeds ``tau`` gets its kernel and bias zeroed and masked. Constant
    (zero-variance) vectors are left alone and reported as degenerate.
    """
    x = np.asarray(calibration_x)
    if len(x) == 0:
        raise ValidationError("calibration set is empty")
    conv_names = [l.name for l in model.layers if l.kind == "conv"]
    params = model.params.copy()
    rng = Rng(seed)
    report = []
    for li, name in enumerate(conv_names):
        channels = params[name + ".weight"].shape[0]
        if not 1 <= clusters_k <= channels:
            raise ValidationError(f"clusters_k must be in [1, {channels}] for layer {name}")
        taps: list[np.ndarray] = []
        forward(model.layers, params, x.astype(model.dtype, copy=False), taps=taps)
        act = taps[li].astype(np.float64)  # (N, C, L)
        vecs = act.transpose(1, 0, 2).reshape(channels, -1)
        std = vecs.std(axis=1)
        valid = np.flatnonzero(std > 0)
        degenerate = np.flatnonzero(std == 0).tolist()
        removed: list[int] = []
        if len(valid) >= 2:
            z = (vecs[valid] - vecs[valid].mean(axis=1, keepdims=True)) / std[valid, None]
            corr = np.clip(z @ z.T / z.shape[1], -1.0, 1.0)
            labels = kmeans_pp(z, clusters_k, rng.spawn(name))
            for c in np.unique(labels):
                members = np.flatnonzero(labels == c)  # ascending filter order
                alive: list[int] = []
                for m in members:
                    if any(abs(corr[a, m]) > tau for a in alive):
                        removed.append(int(valid[m]))
                    else:
                        alive.append(m)
        removed.sort()
        if removed:
            for suffix in (".weight", ".bias"):
                key = name + suffix
                mask = params.masks.get(key, np.ones(params[key].shape, dtype=np.uint8)).copy()
                mask[removed] = 0
                params.masks[key] = mask
            params.apply_masks()
        report.append(FilterPruneLayerReport(name, removed, degenerate))
    return model.with_params(ParamSet(params.values, params.masks)), report
