import numpy as np
import pytest

from utils.data_model import EmbeddingSequence, Modality
from utils.errors import (DimensionError, EmptyInputError, InsufficientDataError,
                          ParameterError, ParseError, UndefinedSimilarityError)
from utils.feature_ops import (apply_mad_filter, apply_pca, apply_scaler, chunk_similarity_scores,
                               cosine_similarity, derivative_pool, fit_pca, fit_scaler,
                               inverse_scaler, l2_normalize, load_pca, load_scaler, mad_filter,
                               reconstruct_pca, save_model_json, softmax_temperature, stat_pool)


def _seq(chunks, modality=Modality.VIDEO):
    return EmbeddingSequence('v1', modality, np.asarray(chunks, dtype=float))


class TestNormalization:
    def test_unit_norm(self):
        v = l2_normalize(np.array([3.0, 4.0]))
        np.testing.assert_allclose(v, [0.6, 0.8])

    def test_idempotent(self):
        v = np.random.default_rng(1).normal(size=(6, 8))
        once = l2_normalize(v)
        np.testing.assert_allclose(l2_normalize(once), once, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(once, axis=1), 1.0)

    def test_zero_vector_unchanged(self):
        np.testing.assert_array_equal(l2_normalize(np.zeros(3)), np.zeros(3))


class TestCosine:
    def test_bounds_and_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a, b = rng.normal(size=5), rng.normal(size=5)
            value = cosine_similarity(a, b)
            assert -1.0 <= value <= 1.0
            assert value == pytest.approx(cosine_similarity(b, a))

    def test_one_zero_vector(self):
        assert cosine_similarity(np.zeros(3), np.ones(3)) == 0.0

    def test_two_zero_vectors(self):
        with pytest.raises(UndefinedSimilarityError):
            cosine_similarity(np.zeros(3), np.zeros(3))


class TestMadFilter:
    def test_identical_chunks_are_all_kept(self):
        report = mad_filter(_seq(np.tile([1.0, 2.0, 3.0], (5, 1))))
        assert report.kept.all()
        assert report.mad == 0.0

    def test_single_chunk_is_kept(self):
        report = mad_filter(_seq([[0.5, 0.5]]))
        assert report.kept_count == 1

    def test_outlier_is_rejected(self):
        rng = np.random.default_rng(0)
        base = np.ones(8)
        chunks = base + rng.normal(scale=0.01, size=(10, 8))
        chunks[4] = -base
        report = mad_filter(_seq(chunks))
        assert not report.kept[4]
        assert report.kept_count == 9
        assert apply_mad_filter(_seq(chunks), report).chunks.shape == (9, 8)

    def test_kept_count_is_monotone_in_multiplier(self):
        chunks = np.random.default_rng(4).normal(size=(12, 6))
        counts = [mad_filter(_seq(chunks), multiplier=m).kept_count for m in (0.5, 1, 2, 5, 50)]
        assert counts == sorted(counts)
        assert counts[-1] == 12

    def test_mean_reference(self):
        chunks = np.random.default_rng(2).normal(size=(6, 4)) + 3.0
        scores = chunk_similarity_scores(chunks, reference="mean")
        assert scores.shape == (6,)
        assert np.all(scores <= 1.0)

    def test_zero_chunk_is_an_error(self):
        with pytest.raises(UndefinedSimilarityError):
            mad_filter(_seq([[1.0, 1.0], [0.0, 0.0], [1.0, 0.5]]))

    def test_bad_parameters(self):
        with pytest.raises(ParameterError):
            mad_filter(_seq([[1.0, 0.0]]), multiplier=0)
        with pytest.raises(ParameterError):
            chunk_similarity_scores(np.ones((2, 2)), reference="median")


class TestPooling:
    def test_derivative_pool_of_linear_sequence(self):
        chunks = np.array([[0.0, 1.0], [1.0, 3.0], [2.0, 5.0], [3.0, 7.0]])
        pooled = derivative_pool(_seq(chunks))
        np.testing.assert_allclose(pooled, [1.5, 4.0, 1.0, 2.0, 0.0, 0.0])

    def test_derivative_pool_short_sequences(self):
        pooled = derivative_pool(_seq([[2.0, 4.0]]))
        np.testing.assert_allclose(pooled, [2.0, 4.0, 0.0, 0.0, 0.0, 0.0])
        pooled = derivative_pool(_seq([[0.0, 0.0], [1.0, 2.0]]))
        np.testing.assert_allclose(pooled, [0.5, 1.0, 1.0, 2.0, 0.0, 0.0])

    def test_stat_pool_scalar_stream(self):
        stats = stat_pool([1.0, 2.0, 3.0, 4.0])
        assert stats.min == 1.0
        assert stats.max == 4.0
        assert stats.mean == 2.5
        assert stats.std == pytest.approx(np.sqrt(1.25))

    def test_stat_pool_vector_stream(self):
        stats = stat_pool([[0.0, 10.0], [2.0, 10.0]])
        np.testing.assert_allclose(stats.as_vector(), [0, 10, 2, 10, 1, 10, 1, 0])

    def test_stat_pool_single_element(self):
        assert stat_pool([5.0]).std == 0.0

    def test_stat_pool_empty(self):
        with pytest.raises(EmptyInputError):
            stat_pool([])


class TestScaler:
    def test_round_trip(self):
        rows = np.random.default_rng(9).normal(loc=5.0, scale=3.0, size=(30, 4))
        model = fit_scaler(rows)
        scaled = apply_scaler(model, rows)
        np.testing.assert_allclose(scaled.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(scaled.std(axis=0), 1.0)
        np.testing.assert_allclose(inverse_scaler(model, scaled), rows, atol=1e-9)

    def test_constant_column_maps_to_zero(self):
        rows = np.column_stack([np.arange(5.0), np.full(5, 7.0)])
        scaled = apply_scaler(fit_scaler(rows), rows)
        np.testing.assert_array_equal(scaled[:, 1], 0.0)

    def test_needs_two_rows(self):
        with pytest.raises(InsufficientDataError):
            fit_scaler(np.ones((1, 3)))

    def test_persistence(self, tmp_path):
        rows = np.random.default_rng(1).normal(size=(10, 3))
        model = fit_scaler(rows)
        path = str(tmp_path / 'scaler.json')
        save_model_json(path, model)
        loaded = load_scaler(path)
        np.testing.assert_allclose(apply_scaler(loaded, rows), apply_scaler(model, rows))
        with pytest.raises(ParseError):
            load_pca(path)


class TestPca:
    @pytest.fixture
    def rows(self):
        rng = np.random.default_rng(42)
        return rng.normal(size=(50, 20)) @ np.diag(np.linspace(3.0, 0.1, 20))

    def test_matches_covariance_eigenvectors(self, rows):
        model = fit_pca(rows, target_dim=5, min_variance=1.0)
        centred = rows - rows.mean(axis=0)
        eigvals, eigvecs = np.linalg.eigh(np.cov(centred, rowvar=False))
        order = np.argsort(eigvals)[::-1][:5]
        assert model.k == 5
        for component, index in zip(model.components, order):
            reference = eigvecs[:, index]
            assert abs(abs(np.dot(component, reference)) - 1.0) < 1e-6
        np.testing.assert_allclose(model.explained_variance_ratio,
                                   eigvals[order] / eigvals.sum(), atol=1e-6)

    def test_components_are_orthonormal(self, rows):
        model = fit_pca(rows, target_dim=8, min_variance=1.0)
        np.testing.assert_allclose(model.components @ model.components.T, np.eye(8),
                                   atol=1e-10)

    def test_sign_convention(self, rows):
        model = fit_pca(rows, target_dim=4, min_variance=1.0)
        for component in model.components:
            assert component[np.argmax(np.abs(component))] > 0

    def test_reconstruction_error_is_discarded_variance(self, rows):
        model = fit_pca(rows, target_dim=6, min_variance=1.0)
        rebuilt = reconstruct_pca(model, apply_pca(model, rows))
        error = np.sum((rows - rebuilt) ** 2) / (rows.shape[0] - 1)
        centred = rows - rows.mean(axis=0)
        eigvals = np.sort(np.linalg.eigvalsh(np.cov(centred, rowvar=False)))[::-1]
        assert error == pytest.approx(eigvals[6:].sum(), rel=1e-6)

    def test_variance_threshold_limits_k(self):
        rng = np.random.default_rng(3)
        rows = np.column_stack([rng.normal(scale=10.0, size=40), rng.normal(scale=0.01, size=40),
                                rng.normal(scale=0.01, size=40)])
        assert fit_pca(rows, target_dim=3, min_variance=0.99).k == 1

    def test_rank_limits_k(self):
        rng = np.random.default_rng(8)
        rows = rng.normal(size=(30, 2)) @ rng.normal(size=(2, 6))
        assert fit_pca(rows, target_dim=6, min_variance=1.0).k == 2

    def test_target_larger_than_dim(self, rows):
        with pytest.raises(DimensionError):
            fit_pca(rows, target_dim=21)

    def test_persistence(self, rows, tmp_path):
        model = fit_pca(rows, target_dim=3, min_variance=1.0)
        path = str(tmp_path / 'pca.json')
        save_model_json(path, model)
        np.testing.assert_allclose(apply_pca(load_pca(path), rows), apply_pca(model, rows))


class TestSoftmax:
    def test_sums_to_one(self):
        p = softmax_temperature(np.array([0.1, 0.5, -0.2, 0.3]))
        assert p.sum() == pytest.approx(1.0)

    def test_multiplier_sharpens(self):
        scores = np.array([0.9, 0.1, 0.1, 0.1])
        assert softmax_temperature(scores, 10.0)[0] > softmax_temperature(scores, 1.0)[0]
        assert softmax_temperature(scores, 10.0)[0] > 0.99

    def test_non_positive_temperature(self):
        with pytest.raises(ParameterError):
            softmax_temperature(np.ones(3), 0.0)
