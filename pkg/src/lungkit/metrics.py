"""Overlap, confusion-matrix and ranking metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

METRIC_NAMES = ("dice", "iou", "accuracy", "precision", "recall", "f1", "auc")


def _pair(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    """Dice overlap ``2|A & B| / (|A| + |B|)``; two empty masks score 1.0."""
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.sum(a & b)) / total


def iou(a, b) -> float:
    """Jaccard index ``|A & B| / |A | B|``; two empty masks score 1.0."""
    a, b = _pair(a, b)
    union = int(np.sum(a | b))
    if union == 0:
        return 1.0
    return int(np.sum(a & b)) / union


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, pred, truth) -> "ConfusionCounts":
        pred, truth = _pair(pred, truth)
        return cls(
            tp=int(np.sum(pred & truth)),
            fp=int(np.sum(pred & ~truth)),
            fn=int(np.sum(~pred & truth)),
            tn=int(np.sum(~pred & ~truth)),
        )


def classification_report(c: ConfusionCounts) -> dict[str, float]:
    """Accuracy, precision, recall and F1; undefined ratios are reported as 0."""
    if c.total <= 0:
        raise ValueError("confusion counts are all zero")
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": (c.tp + c.tn) / c.total,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(scores, labels) -> RocCurve:
    """ROC curve over the distinct scores (descending) with trapezoidal AUC.

    The first point is (0, 0) and the last (1, 1). Tied scores move both rates
    at once, which credits each tied positive/negative pair with one half.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"{len(scores)} scores but {len(labels)} labels")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative label")

    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[last_of_group]]
    area = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, area)


def roc_auc(scores, labels) -> float:
    return roc_curve(scores, labels).auc


def aggregate(values) -> tuple[float, float]:
    """Mean and sample standard deviation (divisor n - 1; 0 for a single value)."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("cannot aggregate an empty list")
    n = len(values)
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def segmentation_scores(prob, truth, threshold: float = 0.5) -> dict[str, float]:
    """Dice, IoU and pixel confusion metrics of a probability mask against truth."""
    pred = np.asarray(prob) > threshold
    truth = np.asarray(truth).astype(bool)
    out = {"dice": dice(pred, truth), "iou": iou(pred, truth)}
    out.update(classification_report(ConfusionCounts.from_predictions(pred, truth)))
    return out


def binary_scores(scores, labels, predicted=None, threshold: float = 0.5) -> dict[str, float]:
    """Accuracy, precision, recall, F1 and, when both classes occur, AUC."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if predicted is None:
        predicted = scores > threshold
    out = classification_report(ConfusionCounts.from_predictions(np.asarray(predicted).ravel(), labels))
    if labels.any() and not labels.all():
        out["auc"] = roc_auc(scores, labels.astype(int))
    return out
