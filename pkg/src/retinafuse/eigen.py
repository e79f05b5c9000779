"""Eigenface PCA fitted with the snapshot (Gram matrix) method."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelFormatError, ShapeError
from .serial import read_blobfile, write_blobfile

log = logging.getLogger(__name__)

K_RGB = 61
K_UNET = 40
_MAGIC = b"RFEIGEN1"
# Gram matrices up to this order go through the Jacobi solver by default
JACOBI_MAX_ORDER = 64


@dataclass
class EigenModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (k, D), orthonormal rows
    eigenvalues: np.ndarray  # (k,), nonincreasing
    shape: tuple = None  # canonical (H, W) of the flattened images
    spectrum: np.ndarray = None  # every Gram eigenvalue, descending

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def k(self) -> int:
        return self.components.shape[0]


def image_to_vector(img: np.ndarray, shape=None) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if shape is not None and img.shape != tuple(shape):
        raise ShapeError(f"image shape {img.shape} != model shape {tuple(shape)}")
    return img.reshape(-1).copy()


def vector_to_image(v: np.ndarray, shape) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(shape)


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as columns,
    eigenvalues unsorted. Sweeps stop once the off-diagonal Frobenius norm
    is below ``tol`` times the matrix norm.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = float(a[q, q] - a[p, p]) / (2.0 * float(apq))
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta  # theta**2 would overflow
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def _fix_sign(u: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(u) > 1e-12)
    if nz.size and u[nz[0]] < 0:
        return -u
    return u


def _order_ties(comps, lams, rtol=1e-12):
    """Within runs of equal eigenvalues, order components lexicographically."""
    idx = list(range(len(lams)))
    start = 0
    while start < len(idx):
        end = start + 1
        while end < len(idx) and abs(lams[end] - lams[start]) <= rtol * abs(lams[start]):
            end += 1
        if end - start > 1:
            idx[start:end] = sorted(idx[start:end], key=lambda i: tuple(comps[i]))
        start = end
    return comps[idx], lams[idx]


def fit_pca(samples, k: int, shape=None, solver: str = "auto") -> EigenModel:
    """Fit ``k`` eigenfaces to ``M`` flattened samples (rows of ``samples``).

    The covariance is normalized by 1/M. ``solver`` picks the symmetric
    eigen-solver for the M x M Gram matrix: "jacobi", "lapack", or "auto"
    (Jacobi up to order 64).
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("samples must be an (M, D) array")
    m, d = X.shape
    if m < 2:
        raise ValueError("need at least two samples")
    if k < 0 or k > min(m - 1, d):
        raise ValueError(f"k={k} exceeds min(M-1, D)={min(m - 1, d)}")
    mean = X.mean(axis=0)
    phi = X - mean
    gram = (phi @ phi.T) / m
    if solver == "jacobi" or (solver == "auto" and m <= JACOBI_MAX_ORDER):
        vals, vecs = jacobi_eigh(gram)
    elif solver in ("lapack", "auto"):
        vals, vecs = np.linalg.eigh(gram)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    order = np.argsort(-vals, kind="stable")
    vals, vecs = np.maximum(vals[order], 0.0), vecs[:, order]
    floor = 1e-12 * max(vals[0], 0.0) if vals.size else 0.0
    comps, lams = [], []
    for j in range(k):
        if vals[j] <= floor or vals[j] <= 1e-300:
            break
        u = phi.T @ vecs[:, j]
        u = _fix_sign(u / np.linalg.norm(u))
        comps.append(u)
        lams.append(vals[j])
    if len(comps) < k:
        log.warning("only %d of %d requested components have nonzero variance", len(comps), k)
    comps = np.array(comps).reshape(len(comps), d)
    lams = np.array(lams)
    comps, lams = _order_ties(comps, lams)
    return EigenModel(mean, comps, lams, tuple(shape) if shape else None, vals)


def clamp_k(k: int, n_samples: int, dim: int) -> int:
    """Largest usable component count not above ``k``; warns when lowered."""
    limit = min(n_samples - 1, dim)
    if k > limit:
        log.warning("lowering k from %d to %d (only %d samples)", k, limit, n_samples)
        return limit
    return k


def project(model: EigenModel, x) -> np.ndarray:
    """Eigenface coefficients of one vector, or of each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ShapeError(f"vector dim {x.shape[-1]} != model dim {model.dim}")
    return (x - model.mean) @ model.components.T


def reconstruct(model: EigenModel, c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != model.k:
        raise ShapeError(f"expected {model.k} coefficients, got {c.shape[-1]}")
    return model.mean + c @ model.components


def save_eigen(model: EigenModel, path) -> None:
    header = {
        "format": "retinafuse-eigen",
        "version": 1,
        "dim": model.dim,
        "k": model.k,
        "shape": list(model.shape) if model.shape else None,
    }
    arrays = {
        "mean": model.mean,
        "components": model.components,
        "eigenvalues": model.eigenvalues,
        "spectrum": model.spectrum if model.spectrum is not None else np.zeros(0),
    }
    write_blobfile(path, _MAGIC, header, arrays)


def load_eigen(path) -> EigenModel:
    header, arrays = read_blobfile(path, _MAGIC)
    if header.get("format") != "retinafuse-eigen" or header.get("version") != 1:
        raise ModelFormatError(f"{path}: unsupported eigen model version")
    shape = tuple(header["shape"]) if header["shape"] else None
    return EigenModel(
        arrays["mean"], arrays["components"], arrays["eigenvalues"], shape, arrays["spectrum"]
    )
