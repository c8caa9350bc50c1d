import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cilo.errors import DimensionMismatch
from cilo.model import (
    Dataset,
    FeatureMap,
    FixedBasisHypothesis,
    LinearHypothesis,
    feature_spectral_bound,
    predict,
    subset_product_features,
)

from helpers import random_dataset


def test_feature_order():
    np.testing.assert_array_equal(subset_product_features([2.0, 3.0]), [2, 3, 6])
    np.testing.assert_array_equal(subset_product_features([2.0, 3.0, 5.0]), [2, 3, 6, 5, 10, 15, 30])


def test_ones_and_zeros():
    assert np.all(subset_product_features(np.ones(6)) == 1)
    f = subset_product_features(np.zeros(4))
    assert f.shape == (15,) and not f.any()


def test_truncation_drops_highest_order_first():
    fm = FeatureMap(3, removed=1)
    np.testing.assert_array_equal(fm([2.0, 3.0, 5.0]), [2, 3, 6, 5, 10, 15])
    # among the three pairs, the last in counter order (x2*x3) goes first
    fm = FeatureMap(3, removed=2)
    np.testing.assert_array_equal(fm([2.0, 3.0, 5.0]), [2, 3, 6, 5, 10])
    with pytest.raises(DimensionMismatch):
        FeatureMap(2, removed=3)


def test_default_bench_dimension():
    assert LinearHypothesis(20, FeatureMap(5)).m == 620
    assert LinearHypothesis(20, FeatureMap(5, removed=27)).m == 80


def test_context_dimension_limits():
    with pytest.raises(DimensionMismatch):
        FeatureMap(0)
    with pytest.raises(DimensionMismatch):
        FeatureMap(21)


def test_feature_matrix_is_kron():
    hyp = LinearHypothesis(3, FeatureMap(2))
    x = np.array([0.5, 2.0])
    np.testing.assert_array_equal(hyp.feature_matrix(x), np.kron(np.eye(3), [[0.5, 2.0, 1.0]]))


def test_theta_length_checked():
    hyp = LinearHypothesis(2, FeatureMap(2))
    with pytest.raises(DimensionMismatch):
        predict(np.zeros(5), [1.0, 1.0], hyp)


@given(seed=st.integers(0, 10_000))
def test_prediction_linear_and_bounded(seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, int(rng.integers(1, 5)), 4, k=int(rng.integers(1, 4)))
    a, b = rng.standard_normal(data.m), rng.standard_normal(data.m)
    s, t = rng.standard_normal(2)
    np.testing.assert_allclose(
        data.predict_all(s * a + t * b), s * data.predict_all(a) + t * data.predict_all(b), atol=1e-10
    )
    B = feature_spectral_bound(data)
    assert np.linalg.norm(data.predict_all(a), axis=1).max() <= B * np.linalg.norm(a) + 1e-9


@given(seed=st.integers(0, 10_000))
def test_batched_ops_match_dense(seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)), k=int(rng.integers(1, 4)))
    mats = data.feature_matrices()
    theta = rng.standard_normal(data.m)
    np.testing.assert_allclose(data.predict_all(theta), mats @ theta, atol=1e-10)
    P = rng.standard_normal((data.n, data.d))
    np.testing.assert_allclose(data.adjoint(P), np.einsum("idm,id->m", mats, P) / data.n, atol=1e-10)
    sv = max(np.linalg.svd(M, compute_uv=False)[0] for M in mats)
    assert feature_spectral_bound(data) == pytest.approx(sv, rel=1e-10)


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    data = random_dataset(rng, 3, 5, k=2)
    path = tmp_path / "data.csv"
    data.to_csv(path)
    assert path.read_text().splitlines()[0] == "x_1,x_2,c_1,c_2,c_3"
    back = Dataset.from_csv(path, data.hypothesis)
    np.testing.assert_array_equal(back.X, data.X)
    np.testing.assert_array_equal(back.C, data.C)


def test_dataset_shape_errors():
    hyp = LinearHypothesis(3, FeatureMap(1))
    with pytest.raises(DimensionMismatch):
        Dataset(np.ones((2, 1)), np.ones((3, 3)), hyp)
    with pytest.raises(DimensionMismatch):
        Dataset(np.ones((2, 1)), np.ones((2, 2)), hyp)


def test_fixed_basis_predictions():
    B = np.array([[1.0, 0.0], [2.0, 1.0], [0.0, 3.0]])
    data = Dataset(np.ones((2, 1)), np.zeros((2, 3)), FixedBasisHypothesis(B))
    theta = np.array([1.0, -1.0])
    np.testing.assert_allclose(data.predict_all(theta), np.tile(B @ theta, (2, 1)))
    P = np.arange(6.0).reshape(2, 3)
    np.testing.assert_allclose(data.adjoint(P), B.T @ P.mean(axis=0))
    assert feature_spectral_bound(data) == pytest.approx(np.linalg.svd(B, compute_uv=False)[0])
