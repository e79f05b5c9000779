"""Kernel support vector classification.

Binary machines are trained with sequential minimal optimization on the
dual problem; multi-class models use one-vs-one voting as in libsvm.
Decision functions follow ``f(x) = sum_i coef_i K(sv_i, x) + b`` with
``coef_i = alpha_i * y_i``.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ModelFormatError, ShapeError
from .seeding import make_rng
from .serial import read_blobfile, write_blobfile

log = logging.getLogger(__name__)

FULL_GRAM_LIMIT = 4096
_MAGIC = b"RFSVM001"


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: float = 1.0
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rbf", "polynomial"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.degree < 1:
            raise ValueError("degree must be at least 1")


def default_kernel(kind: str, n_features: int) -> KernelSpec:
    """libsvm defaults: gamma = 1/n_features, degree 3, coef0 0."""
    return KernelSpec(kind, gamma=1.0 / max(n_features, 1))


@dataclass(frozen=True)
class TrainParams:
    C: float = 1.0
    tol: float = 1e-3
    max_passes: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


def kernel_matrix(k: KernelSpec, A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"feature dims differ: {A.shape[1]} vs {B.shape[1]}")
    if k.kind == "rbf":
        sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
        return np.exp(-k.gamma * np.maximum(sq, 0.0))
    return (k.gamma * (A @ B.T) + k.coef0) ** k.degree


def kernel_eval(k: KernelSpec, x, z) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ShapeError(f"vector shapes differ: {x.shape} vs {z.shape}")
    if k.kind == "rbf":
        d = x - z
        return float(np.exp(-k.gamma * np.dot(d, d)))
    return float((k.gamma * np.dot(x, z) + k.coef0) ** k.degree)


class _KernelRows:
    """Full Gram matrix for small problems, LRU row cache otherwise."""

    def __init__(self, k: KernelSpec, X: np.ndarray, capacity: int = 1024):
        self.k, self.X = k, X
        n = len(X)
        if n <= FULL_GRAM_LIMIT:
            self.full = kernel_matrix(k, X, X)
            self.diag = np.diag(self.full).copy()
        else:
            self.full = None
            self.cache = OrderedDict()
            self.capacity = capacity
            self.diag = np.array([kernel_eval(k, x, x) for x in X])
        if not np.all(np.isfinite(self.diag)):
            raise FloatingPointError("non-finite kernel values")

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        if i in self.cache:
            self.cache.move_to_end(i)
            return self.cache[i]
        r = kernel_matrix(self.k, self.X[i : i + 1], self.X)[0]
        if not np.all(np.isfinite(r)):
            raise FloatingPointError("non-finite kernel values")
        self.cache[i] = r
        if len(self.cache) > self.capacity:
            self.cache.popitem(last=False)
        return r


@dataclass
class BinarySvm:
    support_vectors: np.ndarray  # (n_sv, d)
    dual_coefs: np.ndarray  # alpha_i * y_i
    b: float
    kernel: KernelSpec
    C: float = 1.0
    support: np.ndarray = None  # training indices of the support vectors
    converged: bool = True


class _Smo:
    def __init__(self, X, y, k: KernelSpec, p: TrainParams):
        self.X, self.y, self.p = X, y, p
        self.K = _KernelRows(k, X)
        self.n = len(y)
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.E = -y.astype(np.float64)  # f(x_i) - y_i with f = 0
        self.rng = make_rng(p.seed, "smo")
        self.eps = 1e-12

    def _free(self):
        a = self.alpha
        return np.flatnonzero((a > 0) & (a < self.p.C))

    def take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        C = self.p.C
        a1, a2 = self.alpha[i1], self.alpha[i2]
        y1, y2 = self.y[i1], self.y[i2]
        E1, E2 = self.E[i1], self.E[i2]
        s = y1 * y2
        if s < 0:
            L, H = max(0.0, a2 - a1), min(C, C + a2 - a1)
        else:
            L, H = max(0.0, a1 + a2 - C), min(C, a1 + a2)
        if H - L <= 0:
            return False
        r1, r2 = self.K.row(i1), self.K.row(i2)
        k11, k12, k22 = r1[i1], r1[i2], r2[i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > 0:
            new2 = min(max(a2 + y2 * (E1 - E2) / eta, L), H)
        else:
            # non-positive curvature: take the better end of the segment
            v1 = E1 + y1 - self.b - a1 * y1 * k11 - a2 * y2 * k12
            v2 = E2 + y2 - self.b - a1 * y1 * k12 - a2 * y2 * k22

            def dual(t2):
                t1 = a1 + s * (a2 - t2)
                quad = t1 * t1 * k11 + t2 * t2 * k22 + 2 * s * t1 * t2 * k12
                return t1 + t2 - 0.5 * quad - y1 * t1 * v1 - y2 * t2 * v2

            obj_l, obj_h = dual(L), dual(H)
            if obj_l > obj_h + self.eps:
                new2 = L
            elif obj_h > obj_l + self.eps:
                new2 = H
            else:
                new2 = a2
        if abs(new2 - a2) < self.eps * (new2 + a2 + self.eps):
            return False
        new1 = a1 + s * (a2 - new2)
        # snap to the box to keep bound membership exact
        new1 = 0.0 if new1 < 1e-12 * C else (C if new1 > C * (1 - 1e-12) else new1)
        new2 = 0.0 if new2 < 1e-12 * C else (C if new2 > C * (1 - 1e-12) else new2)
        d1, d2 = y1 * (new1 - a1), y2 * (new2 - a2)
        b1 = self.b - E1 - d1 * k11 - d2 * k12
        b2 = self.b - E2 - d1 * k12 - d2 * k22
        if 0 < new1 < C:
            b_new = b1
        elif 0 < new2 < C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        self.E += d1 * r1 + d2 * r2 + (b_new - self.b)
        self.b = b_new
        self.alpha[i1], self.alpha[i2] = new1, new2
        return True

    def _violates(self, i2: int) -> bool:
        r2 = self.E[i2] * self.y[i2]
        a2 = self.alpha[i2]
        tol = self.p.tol
        return (r2 < -tol and a2 < self.p.C) or (r2 > tol and a2 > 0)

    def examine(self, i2: int) -> bool:
        if not self._violates(i2):
            return False
        free = self._free()
        if free.size > 1:
            gap = np.abs(self.E[free] - self.E[i2])
            best = free[gap == gap.max()]
            i1 = int(best[self.rng.integers(best.size)]) if best.size > 1 else int(best[0])
            if self.take_step(i1, i2):
                return True
        if free.size:
            start = int(self.rng.integers(free.size))
            for i1 in np.roll(free, -start):
                if self.take_step(int(i1), i2):
                    return True
        start = int(self.rng.integers(self.n))
        for i1 in np.roll(np.arange(self.n), -start):
            if self.take_step(int(i1), i2):
                return True
        return False

    def run(self) -> bool:
        examine_all = True
        for _ in range(self.p.max_passes):
            if examine_all:
                candidates = range(self.n)
            else:
                candidates = self._free()
            changed = sum(self.examine(int(i)) for i in candidates)
            if examine_all and changed == 0:
                return True
            if examine_all:
                examine_all = False
            elif changed == 0:
                examine_all = True
        return False

    def final_bias(self) -> float:
        """Average over free vectors, else midpoint of the feasible interval."""
        g = np.array([np.dot(self.alpha * self.y, self.K.row(i)) for i in range(self.n)])
        free = self._free()
        if free.size:
            return float(np.mean(self.y[free] - g[free]))
        at_zero = self.alpha <= 0
        at_c = ~at_zero
        pos, neg = self.y > 0, self.y < 0
        target = self.y - g
        lo_set = (pos & at_zero) | (neg & at_c)
        hi_set = (pos & at_c) | (neg & at_zero)
        lo = target[lo_set].max() if lo_set.any() else -np.inf
        hi = target[hi_set].min() if hi_set.any() else np.inf
        if np.isfinite(lo) and np.isfinite(hi):
            return float(0.5 * (lo + hi))
        return float(lo if np.isfinite(lo) else hi)


def smo_train(X, y, k: KernelSpec, p: TrainParams | None = None) -> BinarySvm:
    """Train a binary soft-margin SVM; labels must be -1/+1."""
    p = p or TrainParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeError("X must be (n, d) with one label per row")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise ValueError("both classes must be present")
    smo = _Smo(X, y, k, p)
    converged = smo.run()
    if not converged:
        log.warning("SMO stopped after %d passes without meeting tol", p.max_passes)
    b = smo.final_bias()
    sv = np.flatnonzero(smo.alpha > 0)
    return BinarySvm(
        X[sv].copy(), smo.alpha[sv] * y[sv], b, k, p.C, sv, converged
    )


def alphas(m: BinarySvm) -> np.ndarray:
    return np.abs(m.dual_coefs)


def decision(m: BinarySvm, x) -> np.ndarray | float:
    """Decision value for one vector or each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != m.support_vectors.shape[1]:
        raise ShapeError(f"expected {m.support_vectors.shape[1]} features, got {X.shape[1]}")
    f = kernel_matrix(m.kernel, X, m.support_vectors) @ m.dual_coefs + m.b
    return float(f[0]) if single else f


def dual_objective(alpha, X, y, k: KernelSpec) -> float:
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ kernel_matrix(k, X, X) @ ay)


def full_alpha(m: BinarySvm, n: int) -> np.ndarray:
    a = np.zeros(n)
    a[m.support] = alphas(m)
    return a


def hinge_objective(m: BinarySvm, X, y, lam: float) -> float:
    """``mean(max(0, 1 - y f(x))) + lam * ||w||^2`` with ``||w||^2`` in
    kernel space."""
    f = decision(m, np.atleast_2d(X))
    hinge = np.maximum(0.0, 1.0 - np.asarray(y, dtype=np.float64) * f).mean()
    sv = m.support_vectors
    w2 = m.dual_coefs @ kernel_matrix(m.kernel, sv, sv) @ m.dual_coefs if len(sv) else 0.0
    return float(hinge + lam * w2)


def kkt_violation(m: BinarySvm, X, y) -> float:
    """Largest KKT violation of a trained machine on its training data."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a = full_alpha(m, len(y))
    margin = y * decision(m, X)
    C = m.C
    v = np.zeros(len(y))
    lower = a < C  # needs margin >= 1
    upper = a > 0  # needs margin <= 1
    v[lower] = np.maximum(v[lower], 1.0 - margin[lower])
    v[upper] = np.maximum(v[upper], margin[upper] - 1.0)
    return float(v.max())


@dataclass
class MultiSvm:
    """One-vs-one ensemble. ``machines[(i, j)]`` maps class i to -1 and j to +1.

    Features are standardized with ``(x - shift) / scale`` before every
    machine.
    """

    n_classes: int
    machines: dict
    shift: np.ndarray
    scale: np.ndarray
    kernel: KernelSpec
    params: TrainParams = field(default_factory=TrainParams)

    @property
    def pairs(self):
        return list(combinations(range(self.n_classes), 2))

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.shift.size:
            raise ShapeError(f"expected {self.shift.size} features, got {X.shape[-1]}")
        return (X - self.shift) / self.scale


def ovo_train(
    features,
    labels,
    kernel: KernelSpec | str,
    p: TrainParams | None = None,
    n_classes: int | None = None,
    standardize: bool = True,
    workers: int = 1,
) -> MultiSvm:
    """Train one binary machine per class pair.

    ``kernel`` may be a kind name, in which case libsvm defaults are used
    for the standardized feature dimension.
    """
    p = p or TrainParams()
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n_classes = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    counts = np.bincount(labels, minlength=n_classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"classes absent from training data: {missing.tolist()}")
    if standardize:
        shift = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
    else:
        shift, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    if isinstance(kernel, str):
        kernel = default_kernel(kernel, X.shape[1])
    Z = (X - shift) / scale

    def fit(pair):
        i, j = pair
        idx = np.flatnonzero((labels == i) | (labels == j))
        yy = np.where(labels[idx] == j, 1.0, -1.0)
        sub = TrainParams(p.C, p.tol, p.max_passes, p.seed * 1_000_003 + i * 1009 + j)
        return smo_train(Z[idx], yy, kernel, sub)

    pairs = list(combinations(range(n_classes), 2))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            fitted = list(pool.map(fit, pairs))
    else:
        fitted = [fit(pair) for pair in pairs]
    return MultiSvm(n_classes, dict(zip(pairs, fitted)), shift, scale, kernel, p)


def ovo_votes(m: MultiSvm, x) -> np.ndarray:
    """Vote counts per class for one vector ``(C,)`` or a matrix ``(n, C)``.

    A decision value of exactly 0 votes for the lower class index.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    Z = m.standardize(np.atleast_2d(x))
    votes = np.zeros((len(Z), m.n_classes), dtype=np.int64)
    rows = np.arange(len(Z))
    for (i, j), machine in m.machines.items():
        f = decision(machine, Z)
        votes[rows, np.where(f > 0, j, i)] += 1
    return votes[0] if single else votes


def ovo_predict(m: MultiSvm, x) -> np.ndarray:
    """Most-voted class; ties go to the lowest class index."""
    return np.argmax(ovo_votes(m, x), axis=-1)


def save_multisvm(m: MultiSvm, path) -> None:
    arrays = {"shift": m.shift, "scale": m.scale}
    biases = []
    for (i, j), mach in m.machines.items():
        arrays[f"sv_{i}_{j}"] = mach.support_vectors
        arrays[f"coef_{i}_{j}"] = mach.dual_coefs
        arrays[f"idx_{i}_{j}"] = mach.support.astype(np.float64)
        biases.append(mach.b)
    arrays["bias"] = np.array(biases)
    header = {
        "format": "retinafuse-svm",
        "version": 1,
        "n_classes": m.n_classes,
        "kernel": {
            "kind": m.kernel.kind,
            "gamma": m.kernel.gamma,
            "degree": m.kernel.degree,
            "coef0": m.kernel.coef0,
        },
        "params": {"C": m.params.C, "tol": m.params.tol, "max_passes": m.params.max_passes,
                   "seed": m.params.seed},
        "pairs": [list(pq) for pq in m.machines],
    }
    write_blobfile(path, _MAGIC, header, arrays)


def load_multisvm(path) -> MultiSvm:
    header, arrays = read_blobfile(path, _MAGIC)
    if header.get("format") != "retinafuse-svm" or header.get("version") != 1:
        raise ModelFormatError(f"{path}: unsupported SVM model version")
    kernel = KernelSpec(**header["kernel"])
    params = TrainParams(**header["params"])
    machines = {}
    for n, (i, j) in enumerate(header["pairs"]):
        machines[(i, j)] = BinarySvm(
            arrays[f"sv_{i}_{j}"],
            arrays[f"coef_{i}_{j}"],
            float(arrays["bias"][n]),
            kernel,
            params.C,
            arrays[f"idx_{i}_{j}"].astype(np.intp),
        )
    return MultiSvm(header["n_classes"], machines, arrays["shift"], arrays["scale"], kernel, params)
