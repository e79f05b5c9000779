"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criteria 6 and 7 share one trained segmentation network; its training time
is charged to both runtime budgets.
"""

import json
import time

import numpy as np
import pytest

from gradcheck import find_fixture, relative_errors
from oracles import brute_force_dual, clahe_reference, dense_pca, pairwise_auc_loop
from pipeline import run_pipeline
from retinafuse import fusion, synth
from retinafuse.dataio import load_image, split_manifest
from retinafuse.eigen import fit_pca, project, reconstruct
from retinafuse.enhance import ClaheParams, clahe, hist_equalize
from retinafuse.metrics import accuracy, jaccard, roc_auc, segmentation_report
from retinafuse.segment import SegNet, SegNetConfig, train_from_masks, vessel_probability
from retinafuse.svm import (
    KernelSpec,
    TrainParams,
    dual_objective,
    full_alpha,
    kernel_matrix,
    kkt_violation,
    ovo_predict,
    smo_train,
)


@pytest.fixture
def report(capsys):
    def emit(n, title, ok, detail):
        with capsys.disabled():
            print(f"\nacceptance {n}: {'PASS' if ok else 'FAIL'} - {title} [{detail}]")
        assert ok, f"criterion {n} failed: {detail}"

    return emit


@pytest.fixture(scope="module")
def trained_segnet():
    t0 = time.perf_counter()
    pairs = synth.vessel_patches(0, 200, size=64)
    res = train_from_masks([a for a, _ in pairs], [m for _, m in pairs], 50, seed=0)
    return res.net, time.perf_counter() - t0


def test_criterion_1_smo_matches_brute_force(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_gap, worst_kkt, fits = 0.0, 0.0, 0
    while fits < 25:
        n = int(rng.integers(2, 7))
        X = rng.normal(size=(n, 2))
        y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        if len(set(y)) < 2:
            continue
        k = KernelSpec("rbf", float(rng.uniform(0.2, 2.0))) if fits % 2 == 0 else \
            KernelSpec("polynomial", float(rng.uniform(0.5, 1.5)), 2, 1.0)
        p = TrainParams(C=float(rng.choice([0.5, 1.0, 10.0])), seed=fits)
        m = smo_train(X, y, k, p)
        best, _ = brute_force_dual(kernel_matrix(k, X, X), y, p.C)
        worst_gap = max(worst_gap, abs(dual_objective(full_alpha(m, n), X, y, k) - best))
        worst_kkt = max(worst_kkt, kkt_violation(m, X, y) - p.tol)
        fits += 1
    dt = time.perf_counter() - t0
    report(1, "SMO vs brute-force dual", worst_gap <= 1e-4 and worst_kkt <= 0 and dt < 10,
           f"max |gap| {worst_gap:.2e}, KKT excess {worst_kkt:.1e}, {dt:.1f}s")


def test_criterion_2_gradient_check(report):
    t0 = time.perf_counter()
    seed, (net, x, y, w) = find_fixture()
    err = relative_errors(net, x, y, w)
    dt = time.perf_counter() - t0
    report(2, "segmentation gradients vs central differences", err.max() < 1e-4 and dt < 30,
           f"fixture seed {seed}, {err.size} parameters, max rel err {err.max():.2e}, {dt:.1f}s")


def test_criterion_3_pca_equivalence(report):
    rng = np.random.default_rng(3)
    worst = {"eig": 0.0, "vec": 0.0, "eq3": 0.0, "rec": 0.0}
    for _ in range(20):
        m = int(rng.integers(2, 11))
        d = int(rng.integers(m, 26))
        X = rng.normal(size=(m, d))
        model = fit_pca(X, m - 1)
        lam, vec = dense_pca(X)
        worst["eig"] = max(worst["eig"],
                           np.max(np.abs(model.eigenvalues - lam[: m - 1]) / lam[: m - 1]))
        for u, v in zip(model.components, vec[: m - 1]):
            v = v if u @ v >= 0 else -v
            worst["vec"] = max(worst["vec"], np.abs(u - v).max())
        phi = X - model.mean
        implied = ((phi @ model.components.T) ** 2).mean(axis=0)
        worst["eq3"] = max(worst["eq3"], np.max(np.abs(implied - model.eigenvalues)
                                                / model.eigenvalues))
        back = reconstruct(model, project(model, X))
        worst["rec"] = max(worst["rec"], np.abs(back - X).max() / np.abs(X).max())
    ok = worst["eig"] <= 1e-8 and worst["vec"] <= 1e-8 and worst["eq3"] <= 1e-8 \
        and worst["rec"] <= 1e-6
    report(3, "snapshot PCA vs dense covariance", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_4_metric_oracles(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, 5, n) / 5 if i % 2 else rng.random(n)
        worst = max(worst, abs(roc_auc(scores, labels).auc
                               - pairwise_auc_loop(scores.tolist(), labels.tolist())))
    a = np.zeros((4, 4), np.uint8)
    b = a.copy()
    a[0] = 1
    b[0, 2:] = 1
    b[1, :2] = 1
    fixtures = [
        jaccard(a, b) == 2 / 6,
        jaccard(a, a) == 1.0,
        jaccard(a, 1 - a) == 0.0,
        jaccard(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0,
        accuracy([0, 1, 1, 3], [0, 1, 2, 3]) == 0.75,
        accuracy([0, 1], [0, 1]) == 1.0,
        accuracy([1, 0], [0, 1]) == 0.0,
    ]
    report(4, "ROC trapezoid vs pairwise oracle, hand fixtures", worst <= 1e-12 and all(fixtures),
           f"max |diff| {worst:.1e} over 100 instances, {sum(fixtures)}/{len(fixtures)} fixtures")


def test_criterion_5_degenerate_fusion(report, tmp_path):
    manifest = synth.gen_disease_dataset(
        synth.DiseaseParams(seed=5, n_classes=4, per_class=15, size=64), tmp_path)
    split = split_manifest(manifest, 0)
    net = SegNet.init(SegNetConfig(depth=1, base_channels=4), seed=0)
    model = fusion.train_two_stream(manifest, split, net, fusion.TrainConfig(shape=(32, 32))).model
    mismatches, total = 0, 0
    for kind in model.svms:
        model.kernel = kind
        svm_a, svm_b = model.svms[kind]
        for i in split.test:
            img = load_image(manifest.resolve(i))
            fa, fb = fusion.stream_features(model, img)
            for w, alone in ((1.0, ovo_predict(svm_a, fa)), (0.0, ovo_predict(svm_b, fb))):
                model.hybrid_w = w
                mismatches += fusion.predict(model, img)[0] != alone
                total += 1
    report(5, "hybrid_w in {0, 1} reproduces single streams", mismatches == 0,
           f"{total - mismatches}/{total} predictions identical")


def test_criterion_7_segmentation(report, trained_segnet):
    net, train_time = trained_segnet
    test = synth.vessel_patches(1, 50, size=64)
    rep = segmentation_report([vessel_probability(net, a) for a, _ in test], [m for _, m in test])
    ok = rep["jaccard_mean"] >= 0.70 and rep["roc_auc"] >= 0.90 and train_time < 15 * 60
    report(7, "segmentation at desk scale", ok,
           f"Jaccard {rep['jaccard_mean']:.4f}, ROC-AUC {rep['roc_auc']:.4f}, "
           f"PR-AUC {rep['pr_auc']:.4f}, training {train_time:.0f}s")


def test_criterion_6_two_stream_benchmark(report, trained_segnet, tmp_path):
    net, seg_time = trained_segnet
    t0 = time.perf_counter()
    manifest = synth.gen_disease_dataset(synth.DiseaseParams(seed=0), tmp_path)
    split = split_manifest(manifest, 0)
    rows = fusion.train_two_stream(manifest, split, net).sweep
    dt = time.perf_counter() - t0 + seg_time
    best = fusion.best_row(rows)
    single = max(r.val_accuracy for r in rows if r.hybrid_w in (0.0, 1.0))
    ok = best.val_accuracy >= single - 0.01 and best.test_accuracy >= 0.85 and dt < 30 * 60
    table = " ".join(f"{r.kernel[:4]}@{r.hybrid_w:g}={r.val_accuracy:.3f}" for r in rows)
    report(6, "synthetic two-stream benchmark", ok,
           f"best {best.kernel} w={best.hybrid_w:g} val {best.val_accuracy:.3f} "
           f"(single-stream max {single:.3f}), test {best.test_accuracy:.3f}, {dt:.0f}s; {table}")


def test_criterion_8_clahe_reduction(report):
    rng = np.random.default_rng(8)
    exact = 0
    for _ in range(50):
        h, w = rng.integers(4, 40, size=2)
        img = rng.integers(0, 256, (h, w)) / 255.0
        exact += np.array_equal(clahe(img, ClaheParams(1, 1, 1.0)), hist_equalize(img))
    worst = 0.0
    fixtures = [
        (rng.integers(0, 256, (8, 8)) / 255.0, 2, 2, 0.5),
        (np.array([[0, 0, 0, 40, 40, 40, 200, 200]] * 8) / 255.0, 2, 2, 0.1),
        (rng.integers(0, 256, (8, 8)) / 255.0, 1, 1, 0.2),
        (rng.integers(0, 256, (8, 8)) / 255.0, 2, 2, 0.01),
    ]
    for img, tx, ty, clip in fixtures:
        got = clahe(img, ClaheParams(tx, ty, clip))
        worst = max(worst, np.abs(got - np.array(clahe_reference(img.tolist(), tx, ty, clip))).max())
    report(8, "CLAHE reduction and reference equivalence", exact == 50 and worst <= 1e-12,
           f"{exact}/50 single-tile images bit-exact, reference max |diff| {worst:.1e}")


def test_criterion_9_pipeline_determinism(report, tmp_path):
    kw = dict(vessels=16, vessel_size=64, epochs=3, classes=4, per_class=15, size=64, work=32)
    a = run_pipeline(tmp_path / "a", **kw)
    b = run_pipeline(tmp_path / "b", **kw)
    differ = [f for f in a if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    logs = [json.loads(line) for line in (tmp_path / "a" / "runs.jsonl").read_text().splitlines()]
    ok = a == b and not differ and all(r["exit_code"] == 0 for r in logs)
    kinds = sum(f.endswith(ext) for f in a for ext in (".seg", ".svm", ".eig", ".json", ".svg"))
    report(9, "pipeline twice with seed 0 is byte-identical", ok,
           f"{len(a)} artifacts ({kinds} models/reports/plots), {len(differ)} differ")
