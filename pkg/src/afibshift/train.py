"""Mini-batch SGD with validation early stopping, and k-fold grid search."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .afib_model import ArchConfig, Model, build_model
from .errors import AfibShiftError, NumericError, ValidationError
from .nn_core import ParamSet, backprop_grads, cross_entropy_loss, forward, sgd_step
from .preprocess import kfold_split
from .rng import Rng

log = logging.getLogger(__name__)

Projection = Callable[[ParamSet], ParamSet]


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.05
    weight_decay: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValidationError("learning_rate and weight_decay must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValidationError("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValidationError("patience cannot exceed max_epochs")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.epochs)

    @property
    def val_loss(self) -> list[float]:
        return [e.val_loss for e in self.epochs]

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for e in self.epochs:
                w.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.train_acc:.6f}",
                            f"{e.val_loss:.6f}", f"{e.val_acc:.6f}"])


def evaluate(model: Model, x: np.ndarray, y: np.ndarray, params: ParamSet | None = None,
             batch_size: int = 256) -> tuple[float, float]:
    """Mean cross-entropy and accuracy."""
    params = params or model.params
    probs = np.concatenate([
        forward(model.layers, params, x[i:i + batch_size].astype(model.dtype, copy=False))
        for i in range(0, len(x), batch_size)
    ])
    return cross_entropy_loss(probs, y), float(np.mean(probs.argmax(axis=1) == y))


def train(model: Model, train_set, val_set, hp: Hyperparams = Hyperparams(), seed: int = 0,
          project: Projection | None = None) -> tuple[Model, TrainHistory]:
    """Train a copy of ``model``; return the best-validation-loss parameters.

    ``train_set``/``val_set`` are ``(x, y)`` pairs with x of shape (N, 1, L).
    ``project`` maps the shadow parameters to the ones used in the forward pass
    (straight-through training); gradients always land on the shadows.
    """
    x_tr, y_tr = train_set
    x_va, y_va = val_set
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValidationError("train and validation sets must be nonempty")
    proj = project or (lambda p: p)
    params = model.params.copy()
    params.apply_masks()
    rng = Rng(seed)
    history = TrainHistory()
    best_loss, best_params, wait = np.inf, proj(params), 0
    n = len(x_tr)
    for epoch in range(hp.max_epochs):
        order = rng.spawn(f"epoch:{epoch}").permutation(n)
        loss_sum = correct = 0.0
        for b, start in enumerate(range(0, n, hp.batch_size)):
            idx = order[start:start + hp.batch_size]
            xb = x_tr[idx].astype(model.dtype, copy=False)
            fwd = proj(params)
            try:
                loss, grads, probs = backprop_grads(model.layers, fwd, xb, y_tr[idx], return_probs=True)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {b}: {exc}") from None
            loss_sum += loss * len(idx)
            correct += float(np.sum(probs.argmax(axis=1) == y_tr[idx]))
            params = sgd_step(params, grads, hp.learning_rate, hp.weight_decay)
        fwd = proj(params)
        val_loss, val_acc = evaluate(model, x_va, y_va, fwd)
        if not np.isfinite(val_loss):
            raise NumericError(f"epoch {epoch}: non-finite validation loss")
        history.epochs.append(EpochStats(epoch, loss_sum / n, correct / n, val_loss, val_acc))
        log.debug("epoch %d train_loss=%.4f val_loss=%.4f val_acc=%.4f",
                  epoch, loss_sum / n, val_loss, val_acc)
        if val_loss < best_loss:
            best_loss, best_params, wait = val_loss, fwd.copy(), 0
            history.best_epoch = epoch
        else:
            wait += 1
            if wait >= hp.patience:
                break
    return model.with_params(best_params), history


@dataclass
class GridSearchResult:
    best: Hyperparams
    mean_accuracy: list[float]
    fold_accuracy: list[list[float]]


def grid_search(grid: list[Hyperparams], arch: ArchConfig, x: np.ndarray, y: np.ndarray,
                k: int = 5, seed: int = 0, model_seed: int = 0) -> GridSearchResult:
    """Stratified k-fold CV for each config; the highest mean fold-test accuracy wins.

    Within a fold, early stopping watches the fold's own training data so the
    held-out fold is only ever used for scoring. Ties go to the earlier config.
    """
    if not grid:
        raise ValidationError("empty hyperparameter grid")
    folds = kfold_split(np.asarray(y), k, seed)
    means, per_fold = [], []
    for ci, hp in enumerate(grid):
        accs = []
        for fi, (tr, te) in enumerate(folds):
            model = build_model(arch, model_seed)
            try:
                fitted, _ = train(model, (x[tr], y[tr]), (x[tr], y[tr]), hp, seed=seed + fi)
            except AfibShiftError as exc:
                raise type(exc)(f"grid config {ci} ({hp}), fold {fi}: {exc}") from None
            accs.append(evaluate(fitted, x[te], y[te])[1])
        per_fold.append(accs)
        means.append(float(np.mean(accs)))
    best = int(np.argmax(means))  # first max on ties
    return GridSearchResult(grid[best], means, per_fold)
