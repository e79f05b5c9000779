import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_pca
from retinafuse.eigen import (
    K_RGB,
    K_UNET,
    clamp_k,
    fit_pca,
    image_to_vector,
    jacobi_eigh,
    load_eigen,
    project,
    reconstruct,
    save_eigen,
    vector_to_image,
)
from retinafuse.errors import ShapeError


def _random_set(seed, m, d):
    return np.random.default_rng(seed).normal(size=(m, d))


class TestFlatten:
    def test_row_major(self):
        np.testing.assert_array_equal(image_to_vector(np.array([[1, 2], [3, 4]])), [1, 2, 3, 4])

    def test_round_trip(self):
        img = np.random.default_rng(0).random((3, 5))
        np.testing.assert_array_equal(vector_to_image(image_to_vector(img), (3, 5)), img)

    def test_zero(self):
        assert not image_to_vector(np.zeros((4, 4))).any()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            image_to_vector(np.zeros((4, 4)), shape=(2, 8))


class TestJacobi:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 10**6))
    def test_matches_lapack(self, n, seed):
        a = np.random.default_rng(seed).normal(size=(n, n))
        a = a + a.T
        vals, vecs = jacobi_eigh(a)
        np.testing.assert_allclose(np.sort(vals), np.linalg.eigvalsh(a), atol=1e-10 * max(1, np.abs(a).max()))
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(n), atol=1e-12)
        np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, a, atol=1e-10 * max(1, np.abs(a).max()))

    def test_tiny_off_diagonal(self):
        a = np.diag([3.0, 1.0, 2.0])
        a[0, 2] = a[2, 0] = 1e-200
        vals, _ = jacobi_eigh(a)
        np.testing.assert_allclose(np.sort(vals), [1.0, 2.0, 3.0])


class TestFitPca:
    def test_two_point_hand_example(self):
        m = fit_pca(np.array([[1.0, 0.0], [-1.0, 0.0]]), 1)
        np.testing.assert_array_equal(m.mean, [0.0, 0.0])
        np.testing.assert_allclose(m.components, [[1.0, 0.0]], atol=1e-15)
        assert m.eigenvalues.tolist() == pytest.approx([1.0])
        assert m.spectrum.tolist() == pytest.approx([1.0, 0.0])
        # training samples project to +-1
        np.testing.assert_allclose(project(m, np.array([[1.0, 0.0], [-1.0, 0.0]]))[:, 0], [1.0, -1.0])

    def test_identical_samples(self, caplog):
        with caplog.at_level(logging.WARNING):
            m = fit_pca(np.ones((4, 6)), 2)
        assert m.k == 0
        assert not np.any(m.spectrum)
        assert "nonzero variance" in caplog.text

    def test_snapshot_matches_dense_covariance(self):
        X = _random_set(0, 5, 9)
        m = fit_pca(X, 4)
        lam, vec = dense_pca(X)
        np.testing.assert_allclose(m.eigenvalues, lam[:4], rtol=1e-8)
        for u, v in zip(m.components, vec[:4]):
            assert abs(abs(u @ v) - 1.0) < 1e-8

    @pytest.mark.parametrize("solver", ["jacobi", "lapack"])
    def test_solvers_agree(self, solver):
        X = _random_set(1, 8, 20)
        a = fit_pca(X, 7, solver=solver)
        b = fit_pca(X, 7, solver="jacobi")
        np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-10)
        np.testing.assert_allclose(a.components, b.components, atol=1e-8)

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            fit_pca(_random_set(0, 4, 10), 4)

    def test_bad_solver(self):
        with pytest.raises(ValueError):
            fit_pca(_random_set(0, 4, 10), 2, solver="qr")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 10), st.integers(2, 25), st.integers(0, 10**6))
    def test_properties(self, m_samples, d, seed):
        X = _random_set(seed, m_samples, d)
        k = min(m_samples - 1, d)
        m = fit_pca(X, k)
        phi = X - m.mean
        # orthonormal components, descending nonnegative eigenvalues
        np.testing.assert_allclose(m.components @ m.components.T, np.eye(m.k), atol=1e-6)
        assert np.all(m.eigenvalues >= 0) and np.all(np.diff(m.eigenvalues) <= 1e-12)
        # lambda_k = (1/M) sum_n (u_k . phi_n)^2
        implied = ((phi @ m.components.T) ** 2).mean(axis=0)
        np.testing.assert_allclose(implied, m.eigenvalues, rtol=1e-8)
        # sign convention
        for u in m.components:
            assert u[np.flatnonzero(np.abs(u) > 1e-12)[0]] > 0
        # Bessel inequality
        c = project(m, X)
        assert np.all((c**2).sum(axis=1) <= (phi**2).sum(axis=1) + 1e-9)

    def test_deterministic_bytes(self):
        X = _random_set(3, 9, 30)
        a, b = fit_pca(X, 5), fit_pca(X, 5)
        assert a.components.tobytes() == b.components.tobytes()

    def test_degenerate_eigenvalues_ordered(self):
        # four symmetric points give two equal eigenvalues
        X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        m = fit_pca(X, 2)
        assert m.eigenvalues[0] == pytest.approx(m.eigenvalues[1])
        assert m.components[0].tolist() <= m.components[1].tolist()
        assert fit_pca(X, 2).components.tobytes() == m.components.tobytes()


class TestProjection:
    @pytest.fixture
    def model(self):
        return fit_pca(_random_set(4, 10, 12), 6)

    def test_mean_projects_to_zero(self, model):
        np.testing.assert_allclose(project(model, model.mean), 0, atol=1e-15)

    def test_mean_plus_first_component(self, model):
        c = project(model, model.mean + model.components[0])
        np.testing.assert_allclose(c, np.eye(6)[0], atol=1e-12)

    def test_reconstruct_zero_is_mean(self, model):
        np.testing.assert_array_equal(reconstruct(model, np.zeros(6)), model.mean)

    def test_project_reconstruct_identity_on_span(self, model):
        c = np.random.default_rng(0).normal(size=6)
        np.testing.assert_allclose(project(model, reconstruct(model, c)), c, atol=1e-9)

    def test_full_rank_recovers_training_samples(self):
        X = _random_set(5, 8, 20)
        m = fit_pca(X, 7)
        back = reconstruct(m, project(m, X))
        assert np.abs(back - X).max() <= 1e-6 * np.abs(X).max()

    def test_dimension_errors(self, model):
        with pytest.raises(ShapeError):
            project(model, np.zeros(5))
        with pytest.raises(ShapeError):
            reconstruct(model, np.zeros(5))


def test_clamp_k(caplog):
    assert clamp_k(61, 100, 16384) == 61
    with caplog.at_level(logging.WARNING):
        assert clamp_k(61, 30, 16384) == 29
    assert "lowering k" in caplog.text


def test_default_component_counts():
    assert (K_RGB, K_UNET) == (61, 40)


def test_model_round_trip(tmp_path):
    m = fit_pca(_random_set(6, 7, 16), 3, shape=(4, 4))
    save_eigen(m, tmp_path / "e.eig")
    back = load_eigen(tmp_path / "e.eig")
    assert back.shape == (4, 4)
    for a, b in [(m.mean, back.mean), (m.components, back.components),
                 (m.eigenvalues, back.eigenvalues)]:
        assert a.tobytes() == b.tobytes()
