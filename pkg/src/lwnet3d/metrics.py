"""Confusion-matrix metrics: overall accuracy, average accuracy, kappa."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes (0-based ids)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label and prediction arrays differ in length")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"class ids must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def overall_accuracy(cm: np.ndarray) -> float:
    return float(np.trace(cm) / cm.sum())


def average_accuracy(cm: np.ndarray) -> float:
    """Mean per-class recall over classes that occur in the ground truth."""
    support = cm.sum(axis=1)
    present = support > 0
    if not present.all():
        warnings.warn(
            f"classes {np.flatnonzero(~present).tolist()} have no samples; excluded from AA",
            stacklevel=2,
        )
    return float(np.mean(np.diag(cm)[present] / support[present]))


def kappa(cm: np.ndarray) -> float:
    total = cm.sum()
    p_o = np.trace(cm) / total
    p_e = float(cm.sum(axis=1) @ cm.sum(axis=0)) / float(total) ** 2
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass
class MetricsReport:
    confusion: np.ndarray
    oa: float
    aa: float
    kappa: float

    @classmethod
    def from_confusion(cls, cm) -> "MetricsReport":
        cm = np.asarray(cm, dtype=np.int64)
        if cm.sum() == 0:
            raise ValueError("cannot score an empty sample set")
        return cls(cm, overall_accuracy(cm), average_accuracy(cm), kappa(cm))

    def to_text(self) -> str:
        c = self.confusion.shape[0]
        width = max(5, len(str(self.confusion.max())) + 1)
        head = " " * 6 + "".join(f"{j:>{width}d}" for j in range(c))
        rows = [f"{i:>5d} " + "".join(f"{v:>{width}d}" for v in self.confusion[i]) for i in range(c)]
        summary = f"OA {self.oa:.6f}  AA {self.aa:.6f}  kappa {self.kappa:.6f}"
        return "\n".join(["confusion (rows: true, cols: predicted)", head, *rows, summary])

    def to_csv(self) -> str:
        lines = ["metric,value", f"oa,{self.oa:.10g}", f"aa,{self.aa:.10g}",
                 f"kappa,{self.kappa:.10g}", "", "true\\pred," +
                 ",".join(str(j) for j in range(self.confusion.shape[0]))]
        lines += [f"{i}," + ",".join(str(v) for v in row) for i, row in enumerate(self.confusion)]
        return "\n".join(lines) + "\n"


def predict_labels(log_probs: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    return np.asarray(log_probs).argmax(axis=1)


def evaluate(model, samples, labels, batch_size: int = 256) -> MetricsReport:
    """Score ``model`` (eval mode) on (N, 1, L, S, S) samples with 0-based labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("cannot evaluate an empty sample set")
    pred = predict_labels(model.predict(samples, batch_size))
    return MetricsReport.from_confusion(confusion_matrix(labels, pred, model.num_classes))
