import numpy as np
import pytest

from retinafuse import synth
from retinafuse.dataio import load_image, resize_bilinear


class TestVessel:
    def test_deterministic(self):
        a = synth.gen_vessel(synth.VesselParams(seed=7))
        b = synth.gen_vessel(synth.VesselParams(seed=7))
        assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()

    def test_seeds_differ(self):
        a = synth.gen_vessel(synth.VesselParams(seed=1))[1]
        b = synth.gen_vessel(synth.VesselParams(seed=2))[1]
        assert not np.array_equal(a, b)

    def test_zero_branches_empty_mask(self):
        img, mask = synth.gen_vessel(synth.VesselParams(seed=0, branches=0))
        assert not mask.any()
        assert img.shape == mask.shape

    def test_foreground_fraction_over_100_seeds(self):
        fr = [synth.gen_vessel(synth.VesselParams(seed=s))[1].mean() for s in range(100)]
        assert 0.02 < min(fr) and max(fr) < 0.25

    def test_vessels_darker_than_background(self):
        img, mask = synth.gen_vessel(synth.VesselParams(seed=3))
        disk = synth._disk(img.shape[0])
        assert img[mask > 0].mean() < img[disk & (mask == 0)].mean()

    def test_range_and_dims(self):
        img, mask = synth.gen_vessel(synth.VesselParams(seed=4, size=48))
        assert img.shape == mask.shape == (48, 48)
        assert img.min() >= 0 and img.max() <= 1
        assert set(np.unique(mask)) <= {0, 1}

    @pytest.mark.parametrize("kw", [{"size": 16}, {"radius": (0.5, 2.0)}, {"branches": -1}])
    def test_invalid_params(self, kw):
        with pytest.raises(ValueError):
            synth.VesselParams(**kw)

    def test_depth_window_matches_full_evaluation(self):
        # the windowed rasterizer agrees with a brute-force all-pixel pass
        size = 40
        segs = np.array([[5.0, 5.0, 30.0, 12.0, 2.0], [20.0, 35.0, 22.0, 3.0, 1.5]])
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        best = np.full((size, size), np.inf)
        for ax, ay, bx, by, r in segs:
            for i in range(size):
                for j in range(size):
                    px, py = xx[i, j], yy[i, j]
                    dx, dy = bx - ax, by - ay
                    t = min(max(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0), 1)
                    d = np.hypot(px - ax - t * dx, py - ay - t * dy) / r
                    best[i, j] = min(best[i, j], d)
        np.testing.assert_allclose(synth._vessel_depth(segs, size),
                                   np.clip(1 - best, 0, None), atol=1e-12)


class TestDisease:
    def test_signatures_injective(self):
        sigs = [synth.class_signature(c) for c in range(60)]
        assert len(set(sigs)) == 60

    def test_lesions_leave_mask_unchanged(self):
        p = synth.DiseaseParams(seed=0, size=64)
        img, mask = synth.gen_disease_sample(2, 5, p)
        rng = synth.make_rng(p.seed, "disease", 2, 5)
        vp = synth._sample_vessel_params(synth.class_signature(2), 64, int(rng.integers(2**63)))
        _, plain = synth.gen_vessel(vp)
        np.testing.assert_array_equal(mask, plain)
        assert img.shape == mask.shape

    def test_sample_independent_of_order(self):
        p = synth.DiseaseParams(seed=4, size=32)
        a = synth.gen_disease_sample(3, 2, p)[0]
        synth.gen_disease_sample(1, 0, p)
        assert a.tobytes() == synth.gen_disease_sample(3, 2, p)[0].tobytes()

    def test_manifest_counts(self, tmp_path):
        m = synth.gen_disease_dataset(synth.DiseaseParams(seed=0, per_class=20, size=32), tmp_path)
        assert len(m.entries) == 200
        labels = [lab for _, lab in m.entries]
        assert all(labels.count(c) == 20 for c in set(labels)) and len(set(labels)) == 10
        assert (tmp_path / "manifest.json").is_file()
        assert load_image(m.resolve(0)).shape[:2] == (32, 32)

    def test_byte_identical_files(self, tmp_path):
        p = synth.DiseaseParams(seed=1, n_classes=3, per_class=2, size=32)
        synth.gen_disease_dataset(p, tmp_path / "a")
        synth.gen_disease_dataset(p, tmp_path / "b")
        fa = sorted(f.relative_to(tmp_path / "a") for f in (tmp_path / "a").rglob("*") if f.is_file())
        fb = sorted(f.relative_to(tmp_path / "b") for f in (tmp_path / "b").rglob("*") if f.is_file())
        assert fa == fb
        for f in fa:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            synth.DiseaseParams(per_class=0)

    def test_pilot_nearest_neighbour(self):
        p = synth.DiseaseParams(seed=0, per_class=20)
        X, y = [], []
        for c in range(p.n_classes):
            for i in range(p.per_class):
                img, _ = synth.gen_disease_sample(c, i, p)
                X.append(resize_bilinear(img, 16, 16).ravel())
                y.append(c)
        X, y = np.array(X), np.array(y)
        held = np.arange(len(y)) % 5 == 4
        d = ((X[held][:, None, :] - X[~held][None, :, :]) ** 2).sum(axis=-1)
        acc = np.mean(y[~held][d.argmin(axis=1)] == y[held])
        assert acc >= 0.6


def test_vessel_set_layout(tmp_path):
    names = synth.write_vessel_set(0, 3, tmp_path)
    assert names == ["0000.png", "0001.png", "0002.png"]
    for n in names:
        assert (tmp_path / "images" / n).is_file() and (tmp_path / "masks" / n).is_file()
