import logging
from typing import Optional, Sequence

import numpy as np

from lab.errors import InvalidInputError, DimensionMismatchError
from schemas.core import Architecture, ClassProbabilities, CoarseningMap, Dataset, SoftmaxModel

logger = logging.getLogger("coarsegrain.core")

DEFAULT_PROBABILITY_FLOOR = 1e-300


# SIMPLEX #


def softmax_array(logits: np.ndarray) -> np.ndarray:
    """
    Row-wise softmax through a max-shifted exponential sum

    :param logits: (..., K) logits
    :return: Probabilities of the same shape
    """
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax(logits) -> ClassProbabilities:
    """
    Map a logit vector onto the probability simplex

    :param logits: Finite logits, at least two
    :return: Class probabilities
    """
    f = np.asarray(logits, dtype=float)
    if f.ndim != 1 or f.size < 2:
        raise InvalidInputError("Logits must be a vector with at least two entries")
    if not np.all(np.isfinite(f)):
        raise InvalidInputError("Logits must be finite")
    return ClassProbabilities(probs=softmax_array(f))


# MODEL FAMILY #


def check_theta(model: SoftmaxModel, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size != model.param_count:
        raise DimensionMismatchError(f"Model expects {model.param_count} parameters, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise InvalidInputError("Parameters must be finite")
    return theta


def check_inputs(model: SoftmaxModel, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.feature_dim:
        raise DimensionMismatchError(f"Model expects inputs of dimension {model.feature_dim}, got shape {x.shape}")
    return x


def _hidden_blocks(model: SoftmaxModel, theta: np.ndarray):
    d, h, k = model.feature_dim, model.hidden_width, model.output_rows
    i = 0
    a_mat = theta[i:i + h * d].reshape(h, d)
    i += h * d
    a_vec = theta[i:i + h]
    i += h
    b_mat = theta[i:i + k * h].reshape(k, h)
    i += k * h
    b_vec = theta[i:i + k]
    return a_mat, a_vec, b_mat, b_vec


def _pad_reduced(model: SoftmaxModel, rows: np.ndarray) -> np.ndarray:
    if not model.reduced:
        return rows
    return np.concatenate([rows, np.zeros(rows.shape[:-1] + (1,))], axis=-1)


def batch_logits(model: SoftmaxModel, theta, inputs) -> np.ndarray:
    """
    Logits for a batch of inputs

    :param model: Model family
    :param theta: Parameter vector
    :param inputs: (n, d) inputs
    :return: (n, K) logits
    """
    theta = check_theta(model, theta)
    x = check_inputs(model, inputs)

    if model.architecture is Architecture.linear:
        weights = theta.reshape(model.output_rows, model.feature_dim + 1)
        out = x @ weights[:, :-1].T + weights[:, -1]
    else:
        a_mat, a_vec, b_mat, b_vec = _hidden_blocks(model, theta)
        out = np.tanh(x @ a_mat.T + a_vec) @ b_mat.T + b_vec
    return _pad_reduced(model, out)


def batch_probabilities(model: SoftmaxModel, theta, inputs) -> np.ndarray:
    return softmax_array(batch_logits(model, theta, inputs))


def predict(model: SoftmaxModel, theta, x) -> ClassProbabilities:
    """
    Posterior class probabilities softmax(f(x; theta)) at a single input
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatchError("predict takes a single input vector")
    return ClassProbabilities(probs=batch_probabilities(model, theta, x)[0])


def batch_logit_jacobian(model: SoftmaxModel, theta, inputs) -> np.ndarray:
    """
    Analytic Jacobians of the logits with respect to the parameters

    :param model: Model family
    :param theta: Parameter vector
    :param inputs: (n, d) inputs
    :return: (n, K, p) array; row k of each slice is the gradient of logit k
    """
    theta = check_theta(model, theta)
    x = check_inputs(model, inputs)
    n, d, k = x.shape[0], model.feature_dim, model.output_rows
    jac = np.zeros((n, model.class_count, model.param_count))

    if model.architecture is Architecture.linear:
        x_tilde = np.hstack([x, np.ones((n, 1))])
        for row in range(k):
            jac[:, row, row * (d + 1):(row + 1) * (d + 1)] = x_tilde
        return jac

    h = model.hidden_width
    a_mat, a_vec, b_mat, _ = _hidden_blocks(model, theta)
    hidden = np.tanh(x @ a_mat.T + a_vec)
    slope = 1.0 - hidden ** 2
    # (n, k, h): d f_k / d pre-activation_i
    upstream = b_mat[None, :, :] * slope[:, None, :]
    jac[:, :k, :h * d] = (upstream[:, :, :, None] * x[:, None, None, :]).reshape(n, k, h * d)
    jac[:, :k, h * d:h * d + h] = upstream
    offset = h * d + h
    for row in range(k):
        jac[:, row, offset + row * h:offset + (row + 1) * h] = hidden
    jac[:, :k, offset + k * h:] = np.eye(k)[None, :, :]
    return jac


def logit_jacobian(model: SoftmaxModel, theta, x) -> np.ndarray:
    """
    Jacobian J_f of the logits at a single input, shape (K, p)
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatchError("logit_jacobian takes a single input vector")
    return batch_logit_jacobian(model, theta, x)[0]


def vector_jacobian_product(model: SoftmaxModel, theta, inputs, residuals) -> np.ndarray:
    """
    Sum over samples of J_f(x_i)^T r_i without materializing the Jacobians

    :param model: Model family
    :param theta: Parameter vector
    :param inputs: (n, d) inputs
    :param residuals: (n, K) logit-space vectors
    :return: (p,) accumulated gradient
    """
    theta = check_theta(model, theta)
    x = check_inputs(model, inputs)
    r = np.asarray(residuals, dtype=float)
    if r.shape != (x.shape[0], model.class_count):
        raise DimensionMismatchError(f"Residuals must have shape {(x.shape[0], model.class_count)}, got {r.shape}")
    r = r[:, :model.output_rows]

    if model.architecture is Architecture.linear:
        x_tilde = np.hstack([x, np.ones((x.shape[0], 1))])
        return (r.T @ x_tilde).ravel()

    a_mat, a_vec, b_mat, _ = _hidden_blocks(model, theta)
    hidden = np.tanh(x @ a_mat.T + a_vec)
    grad_b_mat = r.T @ hidden
    grad_b_vec = r.sum(axis=0)
    back = (r @ b_mat) * (1.0 - hidden ** 2)
    grad_a_mat = back.T @ x
    grad_a_vec = back.sum(axis=0)
    return np.concatenate([grad_a_mat.ravel(), grad_a_vec, grad_b_mat.ravel(), grad_b_vec])


# COARSENING #


def coarsen(y: int, coarsening: CoarseningMap, class_count: Optional[int] = None) -> int:
    """
    Coarse label of a fine label

    :param y: 0-based class label
    :param coarsening: Coarsening map
    :param class_count: Number of fine classes, used for range checking when known
    :return: 1{y = c} for the canonical map, g(y) otherwise
    """
    limit = class_count if class_count is not None else (
        None if coarsening.canonical else len(coarsening.mapping))
    if y < 0 or (limit is not None and y >= limit):
        raise InvalidInputError(f"Label {y} out of range")
    if coarsening.canonical:
        return int(y == coarsening.target_class)
    return coarsening.mapping[y]


def coarsen_labels(labels: np.ndarray, coarsening: CoarseningMap, class_count: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise InvalidInputError("Labels out of range")
    if coarsening.canonical:
        return (labels == coarsening.target_class).astype(np.int64)
    return np.asarray(coarsening.mapping, dtype=np.int64)[labels]


def coarse_residuals(eta: np.ndarray, coarse: np.ndarray, indicator: np.ndarray) -> np.ndarray:
    """
    Logit-space gradient of log p(z | x): rho_z - eta, with rho_z the posterior restricted to the fiber of z

    :param eta: (n, K) posteriors
    :param coarse: (n,) coarse labels
    :param indicator: (M, K) fiber indicator
    :return: (n, K) residuals
    """
    fiber = indicator[coarse]
    mass = np.sum(fiber * eta, axis=1, keepdims=True)
    if np.any(mass <= 0):
        raise InvalidInputError("Coarse label has zero probability under the model")
    return fiber * eta / mass - eta


def residuals(model: SoftmaxModel, theta, dataset: Dataset,
              coarsening: Optional[CoarseningMap] = None) -> np.ndarray:
    """
    Per-sample logit-space score residuals: e_y - eta (multiclass) or rho_{g(y)} - eta (coarsened)
    """
    eta = batch_probabilities(model, theta, dataset.inputs)
    labels = _check_labels(model, dataset)
    if coarsening is None:
        onehot = np.zeros_like(eta)
        onehot[np.arange(dataset.n), labels] = 1.0
        return onehot - eta
    coarse = coarsen_labels(labels, coarsening, model.class_count)
    return coarse_residuals(eta, coarse, coarsening.indicator(model.class_count))


def _check_labels(model: SoftmaxModel, dataset: Dataset) -> np.ndarray:
    if dataset.labels.max() >= model.class_count:
        raise DimensionMismatchError(f"Labels exceed the model's {model.class_count} classes")
    return dataset.labels


def log_likelihood(model: SoftmaxModel, theta, dataset: Dataset, coarsening: Optional[CoarseningMap] = None,
                   floor: float = DEFAULT_PROBABILITY_FLOOR) -> float:
    """
    Multiclass log-likelihood sum(log eta_{y_i}), or the coarsened one sum(log p(g(y_i) | x_i)) when a coarsening
    map is given. Probabilities are clamped at ``floor`` so exact zeros never produce -inf

    :param model: Model family
    :param theta: Parameter vector
    :param dataset: Samples
    :param coarsening: None for multiclass, a map for the coarsened likelihood
    :param floor: Probability floor
    :return: Log-likelihood
    """
    eta = batch_probabilities(model, theta, dataset.inputs)
    labels = _check_labels(model, dataset)
    if coarsening is None:
        probs = eta[np.arange(dataset.n), labels]
    else:
        coarse = coarsen_labels(labels, coarsening, model.class_count)
        probs = (eta @ coarsening.indicator(model.class_count).T)[np.arange(dataset.n), coarse]
    return float(np.sum(np.log(np.maximum(probs, floor))))


# PARAMETER UTILITIES #


def center_parameters(model: SoftmaxModel, theta) -> np.ndarray:
    """
    Remove the logit-shift directions: output-layer coefficients are centered across classes. The result defines
    the same posteriors and is the minimum-norm representative that a ridge-penalized fit converges to
    """
    theta = check_theta(model, theta).copy()
    if model.reduced:
        return theta
    if model.architecture is Architecture.linear:
        weights = theta.reshape(model.class_count, model.feature_dim + 1)
        return (weights - weights.mean(axis=0)).ravel()

    h, d, k = model.hidden_width, model.feature_dim, model.class_count
    offset = h * d + h
    b_mat = theta[offset:offset + k * h].reshape(k, h)
    theta[offset:offset + k * h] = (b_mat - b_mat.mean(axis=0)).ravel()
    theta[offset + k * h:] -= theta[offset + k * h:].mean()
    return theta


def expand_classes(source: SoftmaxModel, theta, target: SoftmaxModel, class_map: Sequence[int]) -> np.ndarray:
    """
    Copy a fitted model into a model with more classes. Class ``i`` of the source becomes class ``class_map[i]`` of
    the target, shared layers are copied and new class channels start at zero

    :param source: Fitted model family
    :param theta: Fitted parameters
    :param target: Wider model family with the same architecture and features
    :param class_map: Target class index for every source class
    :return: Parameters for the target model
    """
    theta = check_theta(source, theta)
    if (source.architecture, source.feature_dim, source.hidden_width) != \
            (target.architecture, target.feature_dim, target.hidden_width) or source.reduced or target.reduced:
        raise DimensionMismatchError("Warm start requires matching architecture and features")
    if len(class_map) != source.class_count or max(class_map) >= target.class_count:
        raise DimensionMismatchError("Class map does not fit the target model")

    out = np.zeros(target.param_count)
    if source.architecture is Architecture.linear:
        block = source.feature_dim + 1
        src = theta.reshape(source.class_count, block)
        dst = out.reshape(target.class_count, block)
        for i, j in enumerate(class_map):
            dst[j] = src[i]
        return out

    h, d = source.hidden_width, source.feature_dim
    a_mat, a_vec, b_mat, b_vec = _hidden_blocks(source, theta)
    out[:h * d] = a_mat.ravel()
    out[h * d:h * d + h] = a_vec
    offset = h * d + h
    dst_b = out[offset:offset + target.class_count * h].reshape(target.class_count, h)
    dst_bias = out[offset + target.class_count * h:]
    for i, j in enumerate(class_map):
        dst_b[j] = b_mat[i]
        dst_bias[j] = b_vec[i]
    return out


def parameter_overhead(base: SoftmaxModel, extended: SoftmaxModel) -> tuple[int, float]:
    """
    Extra parameters an extended model carries over its base

    :return: (absolute count, relative increase)
    """
    extra = extended.param_count - base.param_count
    return extra, extra / base.param_count
