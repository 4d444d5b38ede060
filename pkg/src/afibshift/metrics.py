"""Four-class confusion matrix and the reported classification metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import CLASSES, N_CLASSES
from .errors import ValidationError


def confusion_matrix(predictions, labels, n_classes: int = N_CLASSES) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ValidationError(f"length mismatch: {p.shape[0]} predictions vs {y.shape[0]} labels")
    if p.size == 0:
        raise ValidationError("no predictions to score")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def per_class_metrics(cm) -> dict[str, np.ndarray]:
    """One-vs-rest precision, sensitivity, specificity, F1 per class.

    Any ratio with a zero denominator is 0 (e.g. precision of a class never predicted).
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = total - tp - fp - fn
    precision = _ratio(tp, tp + fp)
    sensitivity = _ratio(tp, tp + fn)
    specificity = _ratio(tn, tn + fp)
    f1 = _ratio(2 * precision * sensitivity, precision + sensitivity)
    return {"precision": precision, "sensitivity": sensitivity, "specificity": specificity, "f1": f1}


def macro_metrics(cm, average: str = "macro") -> dict[str, float]:
    cm = np.asarray(cm)
    total = cm.sum()
    if total <= 0:
        raise ValidationError("confusion matrix is empty")
    accuracy = float(np.trace(cm) / total)
    if average == "micro":
        # one-vs-rest pooled counts: precision = sensitivity = f1 = accuracy
        tp = np.trace(cm)
        fp = fn = total - tp
        tn = cm.shape[0] * total - tp - fp - fn
        p = tp / (tp + fp)
        return {"accuracy": accuracy, "precision": float(p), "sensitivity": float(p),
                "specificity": float(tn / (tn + fp)), "f1": float(p)}
    if average != "macro":
        raise ValidationError(f"unknown averaging {average!r}")
    pc = per_class_metrics(cm)
    return {"accuracy": accuracy, **{k: float(v.mean()) for k, v in pc.items()}}


def cinc_overall_f1(cm) -> float:
    """Mean F1 over N, A and O; the noisy class does not count."""
    if np.asarray(cm).sum() <= 0:
        raise ValidationError("confusion matrix is empty")
    f1 = per_class_metrics(cm)["f1"]
    return float(f1[:3].mean())


@dataclass
class EvalReport:
    confusion_matrix: list[list[int]]
    accuracy: float
    precision: float
    sensitivity: float
    specificity: float
    f1: float
    cinc_f1: float
    model_sparsity: float | None = None
    feature_map_sparsity: float | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, predictions, labels, **kwargs) -> "EvalReport":
        cm = confusion_matrix(predictions, labels)
        return cls(cm.tolist(), **macro_metrics(cm), cinc_f1=cinc_overall_f1(cm), **kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = list(CLASSES)
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        d.pop("classes", None)
        return cls(**d)
