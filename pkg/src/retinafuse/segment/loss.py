"""Border-weighted cross-entropy for vessel segmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ShapeError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class WeightMapParams:
    """Border term amplitude ``w0``, width ``sigma`` (pixels) and per-class
    weights ``(background, vessel)``."""

    w0: float = 10.0
    sigma: float = 5.0
    class_weights: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.w0 < 0:
            raise ValueError("w0 must be nonnegative")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if any(c <= 0 for c in self.class_weights):
            raise ValueError("class weights must be positive")


@dataclass
class LossReport:
    total: float
    per_pixel: np.ndarray


def border_term(d1, d2, w0: float, sigma: float):
    """``w0 * exp(-(d1 + d2)^2 / (2 sigma^2))``; infinite distances give 0."""
    d = np.asarray(d1, dtype=np.float64) + np.asarray(d2, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        t = w0 * np.exp(-(d * d) / (2.0 * sigma * sigma))
    return np.where(np.isfinite(d), t, 0.0)


def component_distances(truth: np.ndarray):
    """Euclidean distance to the nearest and second-nearest foreground
    component (4-connectivity). Missing components give ``inf``."""
    truth = np.asarray(truth) > 0
    labels, n = ndimage.label(truth)
    shape = truth.shape
    if n == 0:
        return np.full(shape, np.inf), np.full(shape, np.inf)
    dists = np.empty((n,) + shape)
    for i in range(n):
        dists[i] = ndimage.distance_transform_edt(labels != i + 1)
    if n == 1:
        return dists[0], np.full(shape, np.inf)
    two = np.partition(dists, 1, axis=0)[:2]
    return two[0], two[1]


def weight_map(truth: np.ndarray, p: WeightMapParams | None = None) -> np.ndarray:
    """Per-pixel loss weights: class weight plus border proximity term."""
    p = p or WeightMapParams()
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ShapeError("empty mask")
    wc = np.where(truth > 0, p.class_weights[1], p.class_weights[0]).astype(np.float64)
    d1, d2 = component_distances(truth)
    return wc + border_term(d1, d2, p.w0, p.sigma)


def class_weights_from_masks(masks) -> tuple:
    """Inverse class-frequency weights normalized to mean 1."""
    fg = sum(int(np.count_nonzero(m)) for m in masks)
    total = sum(int(np.asarray(m).size) for m in masks)
    if fg == 0 or fg == total:
        return (1.0, 1.0)
    inv = np.array([total / (total - fg), total / fg])
    inv /= inv.mean()
    return (float(inv[0]), float(inv[1]))


def weighted_xent(probs: np.ndarray, truth: np.ndarray, w: np.ndarray) -> LossReport:
    """``E = -sum_x w(x) log p_true(x)`` with probabilities floored at 1e-12.

    probs: (N, 2, H, W) or (2, H, W); truth and w: matching (N, H, W) or (H, W).
    """
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth).astype(np.intp)
    w = np.asarray(w, dtype=np.float64)
    if probs.ndim == 3:
        probs = probs[None]
    if truth.ndim == 2:
        truth = truth[None]
    if w.ndim == 2:
        w = w[None]
    if probs.shape[1] != 2 or truth.shape != w.shape or probs[:, 0].shape != truth.shape:
        raise ShapeError(
            f"incompatible shapes probs={probs.shape} truth={truth.shape} w={w.shape}"
        )
    p_true = np.take_along_axis(probs, truth[:, None], axis=1)[:, 0]
    contrib = -w * np.log(np.maximum(p_true, PROB_FLOOR))
    return LossReport(float(contrib.sum()), contrib)
