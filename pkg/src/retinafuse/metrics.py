"""Classification and segmentation metrics.

ROC and PR curves are computed at every distinct score threshold.
Segmentation scores are pooled over all pixels of all images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def accuracy(preds, truths) -> float:
    preds, truths = np.asarray(preds), np.asarray(truths)
    if preds.shape != truths.shape:
        raise ShapeError("predictions and truths differ in length")
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(preds == truths))


def confusion_matrix(preds, truths, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truths, dtype=np.intp), np.asarray(preds, dtype=np.intp)), 1)
    return cm


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


@dataclass
class PrCurve:
    precision: np.ndarray
    recall: np.ndarray
    thresholds: np.ndarray
    auc: float


def _ranked_counts(scores, labels):
    """Cumulative (tp, fp) at each distinct threshold, highest score first."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError("scores and labels differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order].astype(np.int64)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return tp, fp, s[last]


def roc_auc(scores, labels) -> RocCurve:
    """ROC curve and trapezoid area; ties count one half."""
    tp, fp, thr = _ranked_counts(scores, labels)
    n_pos, n_neg = tp[-1], fp[-1]
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative labels")
    tpr = np.r_[0, tp] / n_pos
    fpr = np.r_[0, fp] / n_neg
    # exact trapezoid sum on integer counts, normalized once
    area = np.sum((np.r_[0, fp][1:] - np.r_[0, fp][:-1]) * (np.r_[0, tp][1:] + np.r_[0, tp][:-1]))
    return RocCurve(fpr, tpr, np.r_[np.inf, thr], float(area / (2.0 * n_pos * n_neg)))


def pairwise_auc(scores, labels) -> float:
    """``P(s+ > s-) + P(s+ = s-) / 2`` by enumerating all pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need both classes")
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return float((gt + 0.5 * eq) / (pos.size * neg.size))


def pr_curve(scores, labels) -> PrCurve:
    """Precision/recall at each distinct threshold, step-rule area
    ``sum (R_k - R_{k-1}) P_k``. No interpolation."""
    tp, fp, thr = _ranked_counts(scores, labels)
    n_pos = tp[-1]
    if n_pos == 0:
        raise ValueError("PR curve needs at least one positive label")
    precision = tp / (tp + fp)
    recall = tp / n_pos
    area = np.sum(np.diff(np.r_[0, recall]) * precision)
    return PrCurve(precision, recall, thr, float(area))


def pr_auc(scores, labels) -> float:
    return pr_curve(scores, labels).auc


def jaccard(a, b) -> float:
    """Foreground intersection over union; two empty masks score 1."""
    a, b = np.asarray(a) > 0, np.asarray(b) > 0
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def segmentation_report(probs, masks, threshold: float = 0.5) -> dict:
    """Mean per-image Jaccard plus pixel-pooled ROC and PR areas."""
    js = [jaccard(np.asarray(p) > threshold, m) for p, m in zip(probs, masks)]
    scores = np.concatenate([np.asarray(p).ravel() for p in probs])
    labels = np.concatenate([np.asarray(m).ravel() for m in masks]).astype(np.int64)
    roc = roc_auc(scores, labels)
    pr = pr_curve(scores, labels)
    return {
        "jaccard_mean": float(np.mean(js)),
        "jaccard_per_image": [float(j) for j in js],
        "roc_auc": roc.auc,
        "pr_auc": pr.auc,
        "roc": roc,
        "pr": pr,
    }
