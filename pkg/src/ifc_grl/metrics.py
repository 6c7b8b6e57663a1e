"""Classification metrics and pairwise confusion rates."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import List, Sequence, Tuple

import numpy as np


class MetricsError(ValueError):
    pass


class LengthMismatch(MetricsError):
    pass


class LabelOutOfRange(MetricsError):
    pass


class EmptyMatrix(MetricsError):
    pass


class EmptyPair(MetricsError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    balanced_accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "balanced_accuracy": self.balanced_accuracy,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def confusion_matrix(predictions: Sequence[int], labels: Sequence[int], n_classes: int = 11) -> np.ndarray:
    """``cm[i, j]`` counts objects of true class ``i`` predicted as ``j``."""
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    true = np.asarray(labels, dtype=np.int64).ravel()
    if pred.shape != true.shape:
        raise LengthMismatch(f"{pred.size} predictions for {true.size} labels")
    for arr in (pred, true):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(f"class codes must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def metrics(cm: np.ndarray) -> MetricsReport:
    """Accuracy, macro recall (balanced accuracy) and support-weighted P/R/F1."""
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    weights = support / total
    present = support > 0
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        balanced_accuracy=float(recall[present].mean()),
        precision=float((weights * precision).sum()),
        recall=float((weights * recall).sum()),
        f1=float((weights * f1).sum()),
    )


def confusion_rate(cm: np.ndarray, a: int, b: int) -> float:
    """(m_ab + m_ba) / (n_a + n_b), with n taken from the test-set row sums."""
    cm = np.asarray(cm)
    n = int(cm[a].sum() + cm[b].sum())
    if n == 0:
        raise EmptyPair(f"classes {a} and {b} have no test samples")
    return float(cm[a, b] + cm[b, a]) / n


def confusion_rate_table(cm: np.ndarray) -> List[Tuple[Tuple[int, int], float]]:
    """All unordered class pairs with samples, highest rate first, ties by pair code."""
    cm = np.asarray(cm)
    rows = []
    for a, b in combinations(range(cm.shape[0]), 2):
        if cm[a].sum() + cm[b].sum() == 0:
            continue
        rows.append(((a, b), confusion_rate(cm, a, b)))
    rows.sort(key=lambda row: (-row[1], row[0]))
    return rows


def per_class_accuracy(cm: np.ndarray) -> List[Tuple[int, int, int]]:
    """(class code, total, correctly classified) for each class."""
    cm = np.asarray(cm)
    return [(i, int(cm[i].sum()), int(cm[i, i])) for i in range(cm.shape[0])]
