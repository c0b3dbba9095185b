import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from lab.core import (batch_logit_jacobian, batch_logits, center_parameters, coarse_residuals, coarsen,
                      coarsen_labels, expand_classes, log_likelihood, logit_jacobian, parameter_overhead, predict,
                      residuals, softmax, vector_jacobian_product)
from lab.errors import DimensionMismatchError, InvalidInputError
from schemas.core import Architecture, CoarseningMap, Dataset, SoftmaxModel
from tests.conftest import finite_difference, random_theta


def test_softmax_basic():
    probs = softmax([0.0, 0.0, 0.0]).probs
    assert_allclose(probs, np.full(3, 1 / 3))


def test_softmax_extreme_logits():
    probs = softmax([1000.0, 0.0]).probs
    assert probs[0] == 1.0
    assert probs[1] >= 0.0
    assert np.all(np.isfinite(probs))


def test_softmax_shift_invariant():
    f = np.array([0.3, -1.2, 2.5, 0.0])
    assert_allclose(softmax(f).probs, softmax(f + 17.0).probs, rtol=1e-13)


@pytest.mark.parametrize("logits", [[1.0], [0.0, np.inf], [[0.0, 1.0]]])
def test_softmax_rejects_bad_logits(logits):
    with pytest.raises(InvalidInputError):
        softmax(logits)


def test_predict_on_simplex(model):
    theta = random_theta(model, 0)
    probs = predict(model, theta, np.array([0.5, -1.0, 2.0])).probs
    assert probs.shape == (4,)
    assert abs(probs.sum() - 1.0) <= 1e-12


def test_predict_dimension_mismatch(model):
    with pytest.raises(DimensionMismatchError):
        predict(model, random_theta(model, 0), np.zeros(2))
    with pytest.raises(DimensionMismatchError):
        predict(model, np.zeros(model.param_count + 1), np.zeros(3))


def test_reduced_model_pins_last_logit():
    model = SoftmaxModel(feature_dim=2, class_count=3, reduced=True)
    assert model.param_count == 6
    logits = batch_logits(model, random_theta(model, 1), np.ones((4, 2)))
    assert_allclose(logits[:, -1], 0.0)


def test_logit_jacobian_matches_finite_differences(model):
    theta = random_theta(model, 2)
    x = np.array([0.4, -0.7, 1.1])
    jac = logit_jacobian(model, theta, x)
    for k in range(model.class_count):
        numeric = finite_difference(lambda t: batch_logits(model, t, x)[0, k], theta)
        assert_allclose(jac[k], numeric, atol=1e-7)


def test_linear_jacobian_is_block_structured(linear_model):
    x = np.array([2.0, -3.0])
    jac = logit_jacobian(linear_model, random_theta(linear_model, 3), x)
    assert_allclose(jac[1, 3:6], [2.0, -3.0, 1.0])
    assert_allclose(jac[1, :3], 0.0)


def test_vector_jacobian_product_matches_explicit(model):
    theta = random_theta(model, 4)
    x = np.random.default_rng(5).standard_normal((6, 3))
    r = np.random.default_rng(6).standard_normal((6, 4))
    explicit = np.einsum("nkp,nk->p", batch_logit_jacobian(model, theta, x), r)
    assert_allclose(vector_jacobian_product(model, theta, x, r), explicit, atol=1e-12)


def test_coarsen_canonical():
    cmap = CoarseningMap(target_class=2)
    assert [coarsen(y, cmap, 4) for y in range(4)] == [0, 0, 1, 0]
    with pytest.raises(InvalidInputError):
        coarsen(4, cmap, 4)


@pytest.mark.parametrize("k", range(2, 17))
def test_coarsen_target_vs_rest_exhaustively(k):
    for c in range(k):
        cmap = CoarseningMap(target_class=c)
        labels = np.arange(k)
        assert [coarsen(y, cmap, k) for y in labels] == [int(y == c) for y in labels]
        assert coarsen_labels(labels, cmap, k).tolist() == [int(y == c) for y in labels]
        indicator = cmap.indicator(k)
        assert indicator.sum(axis=0).tolist() == [1.0] * k
        assert indicator[1].tolist() == [float(y == c) for y in labels]
        with pytest.raises(InvalidInputError):
            coarsen(k, cmap, k)


def test_coarsen_general_map():
    cmap = CoarseningMap(mapping=(0, 1, 1, 2))
    assert coarsen(2, cmap) == 1
    assert_allclose(coarsen_labels(np.array([0, 3, 2]), cmap, 4), [0, 2, 1])


def test_coarsening_map_must_be_surjective():
    with pytest.raises(ValidationError):
        CoarseningMap(mapping=(0, 2, 2))


def test_coarse_residuals_zero_mass():
    eta = np.array([[1.0, 0.0]])
    with pytest.raises(InvalidInputError):
        coarse_residuals(eta, np.array([1]), np.array([[1.0, 0.0], [0.0, 1.0]]))


def test_log_likelihood_gradient(model):
    rng = np.random.default_rng(7)
    data = Dataset(inputs=rng.standard_normal((20, 3)), labels=rng.integers(0, 4, 20))
    theta = random_theta(model, 8)
    for cmap in (None, CoarseningMap(target_class=1)):
        grad = vector_jacobian_product(model, theta, data.inputs, residuals(model, theta, data, cmap))
        numeric = finite_difference(lambda t: log_likelihood(model, t, data, cmap), theta)
        assert_allclose(grad, numeric, atol=1e-5)


def test_binary_log_likelihood_matches_two_class_sum(linear_model):
    rng = np.random.default_rng(9)
    data = Dataset(inputs=rng.standard_normal((10, 2)), labels=rng.integers(0, 4, 10))
    theta = random_theta(linear_model, 10)
    eta = np.array([predict(linear_model, theta, x).probs for x in data.inputs])
    z = data.labels == 1
    expected = np.sum(np.log(np.where(z, eta[:, 1], 1 - eta[:, 1])))
    assert_allclose(log_likelihood(linear_model, theta, data, CoarseningMap(target_class=1)), expected, rtol=1e-12)


def test_log_likelihood_floor():
    model = SoftmaxModel(feature_dim=1, class_count=2)
    data = Dataset(inputs=np.array([[1.0]]), labels=np.array([1]))
    value = log_likelihood(model, np.array([2000.0, 0.0, 0.0, 0.0]), data)
    assert np.isfinite(value)


def test_center_parameters_keeps_posteriors(model):
    theta = random_theta(model, 11)
    centered = center_parameters(model, theta)
    x = np.array([0.1, 0.2, -0.3])
    assert_allclose(predict(model, centered, x).probs, predict(model, theta, x).probs, rtol=1e-12)


def test_expand_classes_preserves_shared_logits():
    source = SoftmaxModel(feature_dim=7, class_count=2)
    target = SoftmaxModel(feature_dim=7, class_count=5)
    theta = random_theta(source, 12)
    expanded = expand_classes(source, theta, target, [0, 1])
    x = np.random.default_rng(13).standard_normal((3, 7))
    assert_allclose(batch_logits(target, expanded, x)[:, :2], batch_logits(source, theta, x))
    assert_allclose(batch_logits(target, expanded, x)[:, 2:], 0.0)


def test_expand_classes_hidden_copies_hidden_layer():
    source = SoftmaxModel(feature_dim=3, class_count=2, architecture=Architecture.hidden, hidden_width=4)
    target = SoftmaxModel(feature_dim=3, class_count=3, architecture=Architecture.hidden, hidden_width=4)
    theta = random_theta(source, 14)
    expanded = expand_classes(source, theta, target, [0, 1])
    x = np.ones((1, 3))
    assert_allclose(batch_logits(target, expanded, x)[0, :2], batch_logits(source, theta, x)[0])


def test_expand_classes_rejects_other_features():
    with pytest.raises(DimensionMismatchError):
        expand_classes(SoftmaxModel(feature_dim=2, class_count=2), np.zeros(6),
                       SoftmaxModel(feature_dim=3, class_count=3), [0, 1])


def test_parameter_overhead():
    base = SoftmaxModel(feature_dim=7, class_count=2)
    extra, relative = parameter_overhead(base, SoftmaxModel(feature_dim=7, class_count=5))
    assert extra == 24
    assert relative == pytest.approx(1.5)
