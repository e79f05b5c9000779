"""Independent reference computations used as test oracles.

Everything here is written as plain loops or dense linear algebra so that
it shares no code path with the package implementation it checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# --- images ----------------------------------------------------------------


def bilinear_sample_1d(values, n_out):
    """Scalar pixel-center bilinear interpolation of a 1-D row."""
    n_in = len(values)
    out = []
    for i in range(n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        f = src - lo
        out.append(values[lo] * (1 - f) + values[hi] * f)
    return out


def equalize_levels(levels_flat, n_levels=256):
    """Level -> output value for one list of integer levels, or None when
    only one level occurs."""
    counts = [0] * n_levels
    for v in levels_flat:
        counts[v] += 1
    return equalize_counts(counts)


def equalize_counts(counts):
    total = sum(counts)
    cdf, run = [], 0
    for c in counts:
        run += c
        cdf.append(run)
    cdf_min = next(cdf[i] for i, c in enumerate(counts) if c > 0)
    if total == cdf_min:
        return None
    # levels below the first occupied bin have cdf < cdf_min and map to 0
    return [max(0, math.floor(255 * (cdf[i] - cdf_min) / (total - cdf_min) + 0.5)) / 255
            for i in range(len(counts))]


def clahe_reference(img, tiles_x, tiles_y, clip_limit):
    """Straight-line CLAHE: per-tile clip/redistribute/equalize, then a
    per-pixel bilinear blend of the surrounding tile tables."""
    h, w = len(img), len(img[0])
    levels = [[int(math.floor(img[i][j] * 255 + 0.5)) for j in range(w)] for i in range(h)]
    flat = [v for row in levels for v in row]
    if all(v == flat[0] for v in flat):
        return [list(map(float, row)) for row in img]

    def edges(n, t):
        return [(k * n) // t for k in range(t + 1)]

    ey, ex = edges(h, tiles_y), edges(w, tiles_x)
    identity = [v / 255 for v in range(256)]
    tables = {}
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            px = [levels[i][j] for i in range(ey[ty], ey[ty + 1])
                  for j in range(ex[tx], ex[tx + 1])]
            counts = [0] * 256
            for v in px:
                counts[v] += 1
            if sum(1 for c in counts if c) == 1:
                tables[ty, tx] = identity
                continue
            limit = max(1, int(math.floor(clip_limit * len(px))))
            excess = 0
            for b in range(256):
                if counts[b] > limit:
                    excess += counts[b] - limit
                    counts[b] = limit
            for b in range(256):
                counts[b] += excess // 256
            counts[255] += excess % 256
            lut = equalize_counts(counts)
            tables[ty, tx] = identity if lut is None else lut

    def neighbours(pos, n, t):
        e = edges(n, t)
        centers = [(e[k] + e[k + 1]) / 2 for k in range(t)]
        if pos <= centers[0]:
            return 0, 0, 0.0
        if pos >= centers[-1]:
            return t - 1, t - 1, 0.0
        for k in range(t - 1):
            if centers[k] <= pos < centers[k + 1]:
                return k, k + 1, (pos - centers[k]) / (centers[k + 1] - centers[k])
        raise AssertionError("unreachable")

    out = []
    for i in range(h):
        y0, y1, fy = neighbours(i + 0.5, h, tiles_y)
        row = []
        for j in range(w):
            x0, x1, fx = neighbours(j + 0.5, w, tiles_x)
            v = levels[i][j]
            a, b = tables[y0, x0][v], tables[y0, x1][v]
            c, d = tables[y1, x0][v], tables[y1, x1][v]
            row.append((1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d))
        out.append(row)
    return out


# --- svm -------------------------------------------------------------------


def brute_force_dual(K, y, C):
    """Exact maximum of the SVM dual by enumerating active sets.

    Every variable is fixed at 0, fixed at C, or free; for each pattern the
    equality-constrained stationary point is solved from its KKT system
    and kept if feasible. The dual is concave, so the best feasible
    stationary point over all faces is the global maximum.
    Returns ``(objective, alpha)``.
    """
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    Q = (y[:, None] * y[None, :]) * K

    def objective(a):
        return float(a.sum() - 0.5 * a @ Q @ a)

    best, best_alpha = -np.inf, None
    for pattern in itertools.product((0, 1, 2), repeat=n):
        a = np.zeros(n)
        free = [i for i in range(n) if pattern[i] == 2]
        for i in range(n):
            if pattern[i] == 1:
                a[i] = C
        if free:
            F = np.array(free)
            m = len(F)
            A = np.zeros((m + 1, m + 1))
            A[:m, :m] = Q[np.ix_(F, F)]
            A[:m, m] = y[F]
            A[m, :m] = y[F]
            rhs = np.zeros(m + 1)
            rhs[:m] = 1.0 - Q[F] @ a
            rhs[m] = -(y @ a)
            sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            if np.abs(A @ sol - rhs).max() > 1e-9:
                continue
            a[F] = sol[:m]
        if abs(y @ a) > 1e-9 or a.min() < -1e-12 or a.max() > C + 1e-12:
            continue
        val = objective(a)
        if val > best:
            best, best_alpha = val, a
    return best, best_alpha


def decision_loop(support_vectors, dual_coefs, b, kernel_fn, x):
    total = b
    for sv, c in zip(support_vectors, dual_coefs):
        total += c * kernel_fn(sv, x)
    return total


# --- metrics ---------------------------------------------------------------


def pairwise_auc_loop(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def step_pr_auc(scores, labels):
    """Step-rule PR area from a loop over distinct thresholds."""
    thresholds = sorted(set(scores), reverse=True)
    n_pos = sum(labels)
    area, prev_recall = 0.0, 0.0
    for t in thresholds:
        tp = sum(1 for s, l in zip(scores, labels) if s >= t and l == 1)
        fp = sum(1 for s, l in zip(scores, labels) if s >= t and l == 0)
        recall, precision = tp / n_pos, tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


# --- pca -------------------------------------------------------------------


def dense_pca(X):
    """Eigenvalues (descending) and unit eigenvectors of the 1/M covariance."""
    X = np.asarray(X, dtype=np.float64)
    Phi = X - X.mean(axis=0)
    cov = Phi.T @ Phi / len(X)
    lam, vec = np.linalg.eigh(cov)
    order = np.argsort(lam)[::-1]
    return lam[order], vec[:, order].T
