"""
Confusion-matrix based classification metrics.

``cm[i, j]`` counts samples of true class ``i`` predicted as ``j``. Classes
with an empty row and an empty column (never present, never predicted) are
left out of every class mean; any other zero denominator gives that class 0.
"""

from __future__ import annotations

import numpy as np


def confusion(preds, labels, num_classes: int) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"preds and labels differ in length: {preds.shape} vs {labels.shape}")
    if preds.size and (min(preds.min(), labels.min()) < 0 or max(preds.max(), labels.max()) >= num_classes):
        raise ValueError(f"class ids must lie in 0..{num_classes - 1}")
    flat = labels * num_classes + preds
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def _check(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    if (cm < 0).any():
        raise ValueError("confusion matrix entries must be non-negative")
    if cm.sum() == 0:
        raise ValueError("metrics of an empty confusion matrix are undefined")
    return cm


def present_classes(cm) -> np.ndarray:
    cm = np.asarray(cm)
    return (cm.sum(axis=1) + cm.sum(axis=0)) > 0


def _ratio(num, den) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def per_class_accuracy(cm) -> np.ndarray:
    """Recall per class; NaN for classes absent from the labels."""
    cm = np.asarray(cm, dtype=np.int64)
    rows = cm.sum(axis=1)
    acc = _ratio(np.diag(cm), rows)
    acc[rows == 0] = np.nan
    return acc


def per_class_f1(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm)
    return _ratio(2 * tp, cm.sum(axis=1) + cm.sum(axis=0))


def per_class_iou(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm)
    return _ratio(tp, cm.sum(axis=1) + cm.sum(axis=0) - tp)


def overall_accuracy(cm) -> float:
    cm = _check(cm)
    return float(np.trace(cm) / cm.sum())


def average_accuracy(cm) -> float:
    cm = _check(cm)
    return float(np.mean(_ratio(np.diag(cm), cm.sum(axis=1))[present_classes(cm)]))


def macro_f1(cm) -> float:
    cm = _check(cm)
    return float(np.mean(per_class_f1(cm)[present_classes(cm)]))


def mean_iou(cm) -> float:
    cm = _check(cm)
    return float(np.mean(per_class_iou(cm)[present_classes(cm)]))


def summary(cm) -> dict[str, float]:
    return {
        "OA": overall_accuracy(cm),
        "AA": average_accuracy(cm),
        "F1": macro_f1(cm),
        "mIoU": mean_iou(cm),
    }
