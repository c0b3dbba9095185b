import numpy as np
import pytest
from numpy.testing import assert_allclose

from lab.core import predict
from lab.errors import DegeneratePosteriorError, DimensionMismatchError, InvalidInputError
from lab.information import (expected_fisher, expected_observed_information, fisher_binary, fisher_gap,
                             fisher_multiclass, gap_rank, logit_weights, loewner_ge, missing_information,
                             observed_information, oracle_fisher, project_score, score_binary, score_multiclass)
from schemas.core import CoarseningMap, SoftmaxModel
from schemas.information import InfoKind, InfoMatrix
from tests.conftest import random_theta

X = np.array([0.3, -0.8, 1.4])


def test_multiclass_score_has_zero_mean(model):
    theta = random_theta(model, 0)
    eta = predict(model, theta, X).probs
    mean = sum(eta[y] * score_multiclass(model, theta, X, y) for y in range(model.class_count))
    assert_allclose(mean, 0.0, atol=1e-12)


@pytest.mark.parametrize("z", [0, 1])
@pytest.mark.parametrize("c", [0, 2])
def test_projected_score_is_binary_score(model, z, c):
    theta = random_theta(model, 1)
    projected = project_score(model, theta, X, z, CoarseningMap(target_class=c))
    assert_allclose(projected, score_binary(model, theta, X, z, c), rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("c", [0, 1, 3])
def test_fisher_decomposition(model, c):
    theta = random_theta(model, 2)
    full = fisher_multiclass(model, theta, X).entries
    binary = fisher_binary(model, theta, X, c).entries
    gap = fisher_gap(model, theta, X, c).entries
    assert_allclose(full, binary + gap, rtol=1e-10, atol=1e-12 * np.abs(full).max())


def test_missing_information_matches_gap_for_target_vs_rest(model):
    theta = random_theta(model, 3)
    missing = missing_information(model, theta, X, CoarseningMap(target_class=2)).entries
    assert_allclose(missing, fisher_gap(model, theta, X, 2).entries, atol=1e-12)


def test_general_map_decomposition(model):
    theta = random_theta(model, 4)
    cmap = CoarseningMap(mapping=(0, 1, 1, 2))
    full = fisher_multiclass(model, theta, X).entries
    coarse = oracle_fisher(model, theta, X, cmap).entries
    missing = missing_information(model, theta, X, cmap).entries
    assert_allclose(full, coarse + missing, atol=1e-11)


def test_oracle_matches_closed_forms(model):
    theta = random_theta(model, 5)
    assert_allclose(oracle_fisher(model, theta, X).entries, fisher_multiclass(model, theta, X).entries, atol=1e-12)
    assert_allclose(oracle_fisher(model, theta, X, CoarseningMap(target_class=1)).entries,
                    fisher_binary(model, theta, X, 1).entries, atol=1e-12)


def test_observed_information_expectation_is_fisher(model):
    theta = random_theta(model, 6, scale=0.5)
    expected = expected_observed_information(model, theta, X).entries
    assert_allclose(expected, fisher_multiclass(model, theta, X).entries, atol=1e-5)


def test_linear_observed_information_does_not_depend_on_label(linear_model):
    theta = random_theta(linear_model, 7)
    x = np.array([0.5, -0.5])
    first = observed_information(linear_model, theta, x, 0).entries
    assert_allclose(observed_information(linear_model, theta, x, 3).entries, first, atol=1e-5)
    with pytest.raises(InvalidInputError):
        observed_information(linear_model, theta, x, 4)


def test_multiclass_dominates_binary(model):
    theta = random_theta(model, 8)
    inputs = np.random.default_rng(9).standard_normal((50, 3))
    full = expected_fisher(model, theta, inputs, InfoKind.multiclass)
    binary = expected_fisher(model, theta, inputs, InfoKind.binary, CoarseningMap(target_class=1))
    verdict = loewner_ge(full, binary)
    assert verdict.holds
    assert verdict.min_eig > -1e-8


def test_loewner_detects_violation():
    a = InfoMatrix(entries=np.eye(2))
    b = InfoMatrix(entries=np.diag([2.0, 0.5]))
    verdict = loewner_ge(a, b)
    assert not verdict.holds
    assert verdict.min_eig == pytest.approx(-1.0)
    with pytest.raises(DimensionMismatchError):
        loewner_ge(a, InfoMatrix(entries=np.eye(3)))


def test_gap_vanishes_for_two_classes():
    model = SoftmaxModel(feature_dim=2, class_count=2)
    theta = random_theta(model, 10)
    x = np.array([1.0, 2.0])
    assert_allclose(fisher_gap(model, theta, x, 1).entries, 0.0, atol=1e-15)
    assert gap_rank(model, theta, x, 1) == 0
    assert_allclose(fisher_binary(model, theta, x, 1).entries, fisher_multiclass(model, theta, x).entries,
                    atol=1e-12)


@pytest.mark.parametrize("k", [3, 4, 5, 7])
def test_gap_is_positive_definite_on_its_range(k):
    model = SoftmaxModel(feature_dim=2, class_count=k)
    theta = random_theta(model, 11)
    x = np.array([0.2, 0.9])
    assert gap_rank(model, theta, x, 1) == k - 2
    eigenvalues = fisher_gap(model, theta, x, 1).eigenvalues
    top = eigenvalues[-1]
    assert np.all(eigenvalues[-(k - 2):] > 1e-9 * top)
    assert np.all(np.abs(eigenvalues[:-(k - 2)]) <= 1e-12 * top)


def test_gap_rank_for_both_architectures(model):
    theta = random_theta(model, 12)
    assert gap_rank(model, theta, X, 0) == model.class_count - 2


# η = [1/2, 1/4, 1/4] at x = 0, where the logit Jacobian is the identity on the bias entries

ETA = np.array([0.5, 0.25, 0.25])
BIAS_MODEL = SoftmaxModel(feature_dim=1, class_count=3)
BIAS_THETA = np.array([0.0, np.log(0.5), 0.0, np.log(0.25), 0.0, np.log(0.25)])
ORIGIN = np.zeros(1)


def bias_block(entries: np.ndarray) -> np.ndarray:
    return entries[1::2, 1::2]


def test_hand_computed_scores():
    assert_allclose(score_multiclass(BIAS_MODEL, BIAS_THETA, ORIGIN, 1)[1::2], [-0.5, 0.75, -0.25], atol=1e-15)
    assert_allclose(score_binary(BIAS_MODEL, BIAS_THETA, ORIGIN, 1, 0)[1::2], [0.5, -0.25, -0.25], atol=1e-15)
    assert_allclose(score_binary(BIAS_MODEL, BIAS_THETA, ORIGIN, 0, 0)[1::2], [-0.5, 0.25, 0.25], atol=1e-15)
    assert_allclose(project_score(BIAS_MODEL, BIAS_THETA, ORIGIN, 0, CoarseningMap(target_class=0))[1::2],
                    [-0.5, 0.25, 0.25], atol=1e-15)
    assert_allclose(score_multiclass(BIAS_MODEL, BIAS_THETA, ORIGIN, 1)[0::2], 0.0)


def test_hand_computed_weights():
    eta = ETA[None, :]
    cmap = CoarseningMap(target_class=0)
    multiclass = np.array([[1 / 4, -1 / 8, -1 / 8], [-1 / 8, 3 / 16, -1 / 16], [-1 / 8, -1 / 16, 3 / 16]])
    binary = np.array([[1 / 4, -1 / 8, -1 / 8], [-1 / 8, 1 / 16, 1 / 16], [-1 / 8, 1 / 16, 1 / 16]])
    gap = np.array([[0.0, 0.0, 0.0], [0.0, 0.125, -0.125], [0.0, -0.125, 0.125]])
    assert_allclose(logit_weights(eta, InfoKind.multiclass)[0], multiclass, atol=1e-15)
    assert_allclose(logit_weights(eta, InfoKind.binary, cmap)[0], binary, atol=1e-15)
    assert_allclose(logit_weights(eta, InfoKind.gap, cmap)[0], gap, atol=1e-15)
    assert_allclose(logit_weights(eta, InfoKind.missing, cmap)[0], gap, atol=1e-15)


def test_hand_computed_fisher_matrices():
    full = fisher_multiclass(BIAS_MODEL, BIAS_THETA, ORIGIN).entries
    gap = fisher_gap(BIAS_MODEL, BIAS_THETA, ORIGIN, 0).entries
    assert_allclose(bias_block(full), np.diag(ETA) - np.outer(ETA, ETA), atol=1e-15)
    assert_allclose(bias_block(gap), [[0.0, 0.0, 0.0], [0.0, 0.125, -0.125], [0.0, -0.125, 0.125]], atol=1e-15)
    assert_allclose(full[0::2], 0.0)
    assert_allclose(gap[:, 0::2], 0.0)


@pytest.mark.parametrize("k", [2, 3, 6])
def test_identity_coarsening_loses_nothing(k):
    model = SoftmaxModel(feature_dim=2, class_count=k)
    theta = random_theta(model, 13)
    x = np.array([-0.4, 1.1])
    identity = CoarseningMap(mapping=tuple(range(k)))
    assert_allclose(missing_information(model, theta, x, identity).entries, 0.0, atol=1e-14)
    assert_allclose(oracle_fisher(model, theta, x, identity).entries, fisher_multiclass(model, theta, x).entries,
                    atol=1e-12)


def test_expected_fisher_is_average_of_conditionals(model):
    theta = random_theta(model, 12)
    inputs = np.random.default_rng(13).standard_normal((5, 3))
    manual = np.mean([fisher_multiclass(model, theta, x).entries for x in inputs], axis=0)
    assert_allclose(expected_fisher(model, theta, inputs).entries, manual, atol=1e-12)


def test_degenerate_target_posterior():
    model = SoftmaxModel(feature_dim=1, class_count=2)
    theta = np.array([0.0, 0.0, 0.0, 1000.0])
    x = np.array([1.0])
    with pytest.raises(DegeneratePosteriorError):
        fisher_binary(model, theta, x, 1)
    with pytest.raises(DegeneratePosteriorError):
        score_binary(model, theta, x, 1, 1)


def test_invalid_labels(linear_model):
    theta = random_theta(linear_model, 14)
    x = np.zeros(2)
    with pytest.raises(InvalidInputError):
        score_binary(linear_model, theta, x, 2, 1)
    with pytest.raises(InvalidInputError):
        score_multiclass(linear_model, theta, x, -1)
    with pytest.raises(InvalidInputError):
        logit_weights(np.full((1, 4), 0.25), InfoKind.gap, CoarseningMap(mapping=(0, 1, 1, 0)))
