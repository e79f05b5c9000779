"""Two-stream classifier: CLAHE and vessel-probability streams, each reduced
by eigenfaces and classified by a one-vs-one SVM, fused by a weighted vote.

The fusion weight ``hybrid_w`` is the share of the CLAHE stream; the
segmentation stream gets ``1 - hybrid_w``.
"""

from __future__ import annotations

import csv
import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import DatasetSplit, Manifest, file_sha256, load_image, resize_bilinear, to_gray
from .eigen import K_RGB, K_UNET, EigenModel, clamp_k, fit_pca, load_eigen, project, save_eigen
from .enhance import ClaheParams, clahe
from .errors import ModelFormatError, ShapeError
from .metrics import accuracy
from .segment import SegNet, load_segnet, mask_from_probability, save_segnet, vessel_probability
from .svm import MultiSvm, TrainParams, load_multisvm, ovo_train, ovo_votes, save_multisvm

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "retinafuse-bundle"
BUNDLE_VERSION = 1
DEFAULT_GRID = (0.0, 0.4, 0.5, 0.6, 1.0)
KERNELS = ("rbf", "polynomial")


@dataclass
class TwoStreamModel:
    shape: tuple  # canonical (H, W)
    clahe: ClaheParams
    segnet: SegNet
    eigen_rgb: EigenModel
    eigen_unet: EigenModel
    svms: dict  # kernel kind -> (clahe-stream MultiSvm, segmentation-stream MultiSvm)
    classes: list
    kernel: str = "rbf"
    hybrid_w: float = 0.5
    unet_input: str = "probability"  # or "mask"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.hybrid_w <= 1.0:
            raise ValueError("hybrid_w must lie in [0, 1]")
        for kind, (a, b) in self.svms.items():
            if a.n_classes != len(self.classes) or b.n_classes != len(self.classes):
                raise ValueError(f"{kind} SVMs disagree with the class list")
        for em in (self.eigen_rgb, self.eigen_unet):
            if em.dim != self.shape[0] * self.shape[1]:
                raise ValueError("eigen model dimension does not match canonical shape")

    @property
    def svm_rgb(self) -> MultiSvm:
        return self.svms[self.kernel][0]

    @property
    def svm_unet(self) -> MultiSvm:
        return self.svms[self.kernel][1]


@dataclass
class RatioSweepRow:
    hybrid_w: float
    kernel: str
    val_accuracy: float
    test_accuracy: float = float("nan")


def canonical_gray(img: np.ndarray, shape) -> np.ndarray:
    gray = to_gray(img)
    return resize_bilinear(gray, shape[1], shape[0])


def stream_inputs(img, shape, clahe_params: ClaheParams, segnet: SegNet, unet_input="probability"):
    """Flattened pre-PCA vectors of both streams for one image."""
    gray = canonical_gray(img, shape)
    a = clahe(gray, clahe_params).ravel()
    prob = vessel_probability(segnet, gray)
    if unet_input == "mask":
        prob = mask_from_probability(prob).astype(np.float64)
    return a, prob.ravel()


def stream_features(model: TwoStreamModel, img):
    """Eigenface coefficients ``(clahe stream, segmentation stream)``."""
    a, b = stream_inputs(img, model.shape, model.clahe, model.segnet, model.unet_input)
    return project(model.eigen_rgb, a), project(model.eigen_unet, b)


def n_pairs(n_classes: int) -> int:
    return n_classes * (n_classes - 1) // 2


def fused_scores(votes_a, votes_b, w: float) -> np.ndarray:
    """Convex mix of the two streams' normalized one-vs-one vote counts."""
    va = np.asarray(votes_a, dtype=np.float64)
    vb = np.asarray(votes_b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ShapeError(f"vote vectors differ in shape: {va.shape} vs {vb.shape}")
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    n = n_pairs(va.shape[-1])
    if n == 0:
        raise ValueError("fusion needs at least two classes")
    return w * (va / n) + (1.0 - w) * (vb / n)


def argmax_low(scores) -> np.ndarray:
    """Argmax along the last axis, ties to the lowest index."""
    return np.argmax(np.asarray(scores), axis=-1)


def stream_votes(model: TwoStreamModel, feats_a, feats_b, kernel: str | None = None):
    svm_a, svm_b = model.svms[kernel or model.kernel]
    return ovo_votes(svm_a, feats_a), ovo_votes(svm_b, feats_b)


def predict(model: TwoStreamModel, img):
    """``(class id, per-class fused scores)`` for one image."""
    fa, fb = stream_features(model, img)
    va, vb = stream_votes(model, fa, fb)
    scores = fused_scores(va, vb, model.hybrid_w)
    return int(argmax_low(scores)), scores


def predict_features(model: TwoStreamModel, feats_a, feats_b, w=None, kernel=None):
    """Vectorized prediction from precomputed stream features."""
    va, vb = stream_votes(model, feats_a, feats_b, kernel)
    return argmax_low(fused_scores(va, vb, model.hybrid_w if w is None else w))


def sweep_ratio(model: TwoStreamModel, val_feats, val_labels, ratios=DEFAULT_GRID,
                kernels=KERNELS, test_feats=None, test_labels=None) -> list:
    """Accuracy for every (ratio, kernel) pair.

    ``*_feats`` are ``(clahe features, segmentation features)`` matrices.
    """
    if len(val_labels) == 0:
        raise ValueError("empty validation set")
    rows = []
    for kind in kernels:
        va, vb = stream_votes(model, *val_feats, kind)
        if test_feats is not None:
            ta, tb = stream_votes(model, *test_feats, kind)
        for w in ratios:
            acc = accuracy(argmax_low(fused_scores(va, vb, w)), val_labels)
            t_acc = float("nan")
            if test_feats is not None:
                t_acc = accuracy(argmax_low(fused_scores(ta, tb, w)), test_labels)
            rows.append(RatioSweepRow(float(w), kind, acc, t_acc))
    return rows


def best_row(rows) -> RatioSweepRow:
    """Highest validation accuracy; earliest row wins ties."""
    best = rows[0]
    for r in rows[1:]:
        if r.val_accuracy > best.val_accuracy:
            best = r
    return best


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["hybrid_w", "kernel", "val_accuracy", "test_accuracy"])
        for r in rows:
            wr.writerow([f"{r.hybrid_w:.4f}", r.kernel, f"{r.val_accuracy:.6f}",
                         "" if np.isnan(r.test_accuracy) else f"{r.test_accuracy:.6f}"])


def read_sweep_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        RatioSweepRow(float(r["hybrid_w"]), r["kernel"], float(r["val_accuracy"]),
                      float(r["test_accuracy"]) if r["test_accuracy"] else float("nan"))
        for r in rows
    ]


@dataclass
class StreamData:
    """Pre-PCA stream vectors for a list of manifest entries."""

    rgb: np.ndarray
    unet: np.ndarray
    labels: np.ndarray


def compute_stream_data(manifest: Manifest, indices, shape, clahe_params, segnet,
                        unet_input="probability") -> StreamData:
    ids = manifest.label_ids()
    a_rows, b_rows = [], []
    for i in indices:
        a, b = stream_inputs(load_image(manifest.resolve(i)), shape, clahe_params, segnet,
                             unet_input)
        a_rows.append(a)
        b_rows.append(b)
    d = shape[0] * shape[1]
    return StreamData(
        np.array(a_rows).reshape(-1, d), np.array(b_rows).reshape(-1, d), ids[list(indices)]
    )


@dataclass
class TrainConfig:
    shape: tuple = (128, 128)
    clahe: ClaheParams = field(default_factory=ClaheParams)
    k_rgb: int = K_RGB
    k_unet: int = K_UNET
    svm: TrainParams = field(default_factory=TrainParams)
    kernels: tuple = KERNELS
    grid: tuple = DEFAULT_GRID
    unet_input: str = "probability"
    workers: int = 1


@dataclass
class TrainReport:
    model: TwoStreamModel
    sweep: list
    data: dict  # split name -> StreamData


def fit_two_stream(train: StreamData, classes, segnet: SegNet, cfg: TrainConfig) -> TwoStreamModel:
    """Fit both eigenface bases and every kernel's SVM pair on training data."""
    n = len(train.labels)
    d = cfg.shape[0] * cfg.shape[1]
    eig_a = fit_pca(train.rgb, clamp_k(cfg.k_rgb, n, d), cfg.shape)
    eig_b = fit_pca(train.unet, clamp_k(cfg.k_unet, n, d), cfg.shape)
    fa, fb = project(eig_a, train.rgb), project(eig_b, train.unet)
    svms = {}
    for kind in cfg.kernels:
        svms[kind] = (
            ovo_train(fa, train.labels, kind, cfg.svm, len(classes), workers=cfg.workers),
            ovo_train(fb, train.labels, kind, cfg.svm, len(classes), workers=cfg.workers),
        )
    return TwoStreamModel(cfg.shape, cfg.clahe, segnet, eig_a, eig_b, svms, list(classes),
                          kernel=cfg.kernels[0], unet_input=cfg.unet_input)


def project_data(model: TwoStreamModel, data: StreamData):
    return project(model.eigen_rgb, data.rgb), project(model.eigen_unet, data.unet)


def train_two_stream(manifest: Manifest, split: DatasetSplit, segnet: SegNet,
                     cfg: TrainConfig | None = None) -> TrainReport:
    """Train on the split's train part and pick (ratio, kernel) on validation."""
    cfg = cfg or TrainConfig()
    data = {
        name: compute_stream_data(manifest, idx, cfg.shape, cfg.clahe, segnet, cfg.unet_input)
        for name, idx in (("train", split.train), ("validation", split.validation),
                          ("test", split.test))
    }
    model = fit_two_stream(data["train"], manifest.classes, segnet, cfg)
    rows = []
    if len(data["validation"].labels):
        test = data["test"] if len(data["test"].labels) else None
        rows = sweep_ratio(
            model, project_data(model, data["validation"]), data["validation"].labels,
            cfg.grid, cfg.kernels,
            project_data(model, test) if test else None, test.labels if test else None,
        )
        best = best_row(rows)
        model.hybrid_w, model.kernel = best.hybrid_w, best.kernel
    return TrainReport(model, rows, data)


# Bundle directory contents:
#   bundle.json                 header (format, version, shape, CLAHE params,
#                               hybrid_w, kernel, classes, split, checksums)
#   segnet.seg                  segmentation model
#   eigen_rgb.eig, eigen_unet.eig
#   svm_rgb_<kernel>.svm, svm_unet_<kernel>.svm   one pair per trained kernel


def save_bundle(model: TwoStreamModel, path) -> None:
    """Write the bundle into a sibling temp dir, then swap it into place."""
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    save_segnet(model.segnet, tmp / "segnet.seg")
    save_eigen(model.eigen_rgb, tmp / "eigen_rgb.eig")
    save_eigen(model.eigen_unet, tmp / "eigen_unet.eig")
    for kind, (a, b) in model.svms.items():
        save_multisvm(a, tmp / f"svm_rgb_{kind}.svm")
        save_multisvm(b, tmp / f"svm_unet_{kind}.svm")
    header = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "package_version": __version__,
        "shape": list(model.shape),
        "clahe": asdict(model.clahe),
        "hybrid_w": model.hybrid_w,
        "kernel": model.kernel,
        "kernels": list(model.svms),
        "classes": model.classes,
        "unet_input": model.unet_input,
        "meta": model.meta,
    }
    (tmp / "bundle.json").write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")
    old = path.with_name(path.name + ".old")
    if path.exists():
        if old.exists():
            shutil.rmtree(old)
        path.rename(old)
    tmp.rename(path)
    if old.exists():
        shutil.rmtree(old)


def load_bundle(path) -> TwoStreamModel:
    path = Path(path)
    hpath = path / "bundle.json"
    if not hpath.is_file():
        raise ModelFormatError(f"{path}: not a model bundle (bundle.json missing)")
    header = json.loads(hpath.read_text())
    if header.get("format") != BUNDLE_FORMAT or header.get("version") != BUNDLE_VERSION:
        raise ModelFormatError(
            f"{path}: incompatible bundle version {header.get('format')}/{header.get('version')}"
        )
    svms = {
        kind: (load_multisvm(path / f"svm_rgb_{kind}.svm"),
               load_multisvm(path / f"svm_unet_{kind}.svm"))
        for kind in header["kernels"]
    }
    return TwoStreamModel(
        tuple(header["shape"]),
        ClaheParams(**header["clahe"]),
        load_segnet(path / "segnet.seg"),
        load_eigen(path / "eigen_rgb.eig"),
        load_eigen(path / "eigen_unet.eig"),
        svms,
        header["classes"],
        kernel=header["kernel"],
        hybrid_w=header["hybrid_w"],
        unet_input=header["unet_input"],
        meta=header.get("meta", {}),
    )


def manifest_checksum(path) -> str:
    return file_sha256(path)
