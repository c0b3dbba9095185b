import logging
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from lab.core import batch_logits, batch_logit_jacobian, check_inputs, softmax_array
from lab.errors import DegeneratePosteriorError, DimensionMismatchError, InvalidInputError
from schemas.core import CoarseningMap, SoftmaxModel
from schemas.information import InfoKind, InfoMatrix, LoewnerVerdict

logger = logging.getLogger("coarsegrain.information")

# Inputs are processed in fixed-size chunks so the reduction order never depends on worker count
CHUNK_SIZE = 1024


def _posterior_and_jacobian(model: SoftmaxModel, theta, x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatchError("Conditional quantities take a single input vector")
    eta = softmax_array(batch_logits(model, theta, x))[0]
    jac = batch_logit_jacobian(model, theta, x)[0]
    return eta, jac


def _check_target(q: np.ndarray, rest: np.ndarray):
    if np.any(q <= 0.0) or np.any(rest <= 0.0):
        raise DegeneratePosteriorError("Target-class posterior is exactly 0 or 1; binary quantities are undefined")


# SCORES #


def score_multiclass(model: SoftmaxModel, theta, x, y: int) -> np.ndarray:
    """
    Per-sample multiclass score J_f^T (e_y - eta)

    :param model: Model family
    :param theta: Parameter vector
    :param x: Input
    :param y: 0-based class label
    :return: Score vector of length p
    """
    eta, jac = _posterior_and_jacobian(model, theta, x)
    if not 0 <= y < model.class_count:
        raise InvalidInputError(f"Label {y} out of range")
    residual = -eta
    residual[y] += 1.0
    return jac.T @ residual


def score_binary(model: SoftmaxModel, theta, x, z: int, c: int) -> np.ndarray:
    """
    Collapsed-binary score ((z - q) / (q (1 - q))) grad q, with grad q = J_f^T (q (e_c - eta))

    :param model: Model family
    :param theta: Parameter vector
    :param x: Input
    :param z: Binary label, 1 for the target class
    :param c: 0-based target class
    :return: Score vector of length p
    """
    if z not in (0, 1):
        raise InvalidInputError(f"Binary label must be 0 or 1, got {z}")
    eta, jac = _posterior_and_jacobian(model, theta, x)
    if not 0 <= c < model.class_count:
        raise InvalidInputError(f"Target class {c} out of range")
    q = eta[c]
    # 1 - q as a sum of the non-target probabilities keeps precision when q is close to 1
    rest = np.delete(eta, c).sum()
    _check_target(np.asarray(q), np.asarray(rest))
    direction = -eta
    direction[c] = rest
    grad_q = jac.T @ (q * direction)
    return ((rest if z == 1 else -q) / (q * rest)) * grad_q


def project_score(model: SoftmaxModel, theta, x, z: int, coarsening: CoarseningMap) -> np.ndarray:
    """
    Conditional expectation of the multiclass score given the coarse label, by exhaustive summation over the fiber
    of z: sum_{y: g(y) = z} s_Y(y) p(y | x) / p(z | x)

    :param model: Model family
    :param theta: Parameter vector
    :param x: Input
    :param z: Coarse label
    :param coarsening: Coarsening map
    :return: Projected score vector
    """
    eta, jac = _posterior_and_jacobian(model, theta, x)
    indicator = coarsening.indicator(model.class_count)
    if not 0 <= z < indicator.shape[0]:
        raise InvalidInputError(f"Coarse label {z} out of range")
    fiber = np.flatnonzero(indicator[z])
    mass = eta[fiber].sum()
    if mass <= 0.0:
        raise InvalidInputError(f"Coarse label {z} has zero probability at this input")

    projected = np.zeros(model.param_count)
    for y in fiber:
        residual = -eta
        residual[y] += 1.0
        projected += (jac.T @ residual) * (eta[y] / mass)
    return projected


# LOGIT-SPACE WEIGHTS #


def _diag_embed(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape + (v.shape[-1],))
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = v
    return out


def _outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., :, None] * v[..., None, :]


def logit_weights(eta: np.ndarray, kind: InfoKind, coarsening: Optional[CoarseningMap] = None) -> np.ndarray:
    """
    Logit-space middle matrices W such that the conditional information is J_f^T W J_f

    :param eta: (n, K) posteriors
    :param kind: multiclass, binary (coarsened), gap or missing
    :param coarsening: Coarsening map for every kind but multiclass; defaults to target-vs-rest on class 1
    :return: (n, K, K) weights
    """
    if kind is InfoKind.multiclass:
        return _diag_embed(eta) - _outer(eta, eta)

    coarsening = coarsening or CoarseningMap()
    k = eta.shape[-1]

    if coarsening.canonical and kind in (InfoKind.binary, InfoKind.gap):
        c = coarsening.target_class
        if c >= k:
            raise InvalidInputError(f"Target class {c} out of range for {k} classes")
        q = eta[:, c]
        rest = np.delete(eta, c, axis=1).sum(axis=1)
        _check_target(q, rest)
        if kind is InfoKind.binary:
            v = -eta.copy()
            v[:, c] = rest
            return (q / rest)[:, None, None] * _outer(v, v)
        pi = eta / rest[:, None]
        pi[:, c] = 0.0
        return rest[:, None, None] * (_diag_embed(pi) - _outer(pi, pi))

    if kind is InfoKind.gap:
        raise InvalidInputError("The closed-form gap is defined for the target-vs-rest map only")
    if kind not in (InfoKind.binary, InfoKind.missing):
        raise InvalidInputError(f"No logit-space weights for {kind.value} information")

    indicator = coarsening.indicator(k)
    weights = np.zeros(eta.shape + (k,))
    for row in indicator:
        restricted = eta * row
        mass = restricted.sum(axis=1)
        live = mass > 0.0
        safe = np.where(live, mass, 1.0)
        if kind is InfoKind.binary:
            diff = restricted / safe[:, None] - eta
            weights += np.where(live, mass, 0.0)[:, None, None] * _outer(diff, diff)
        else:
            weights += np.where(live[:, None, None],
                                _diag_embed(restricted) - _outer(restricted, restricted) / safe[:, None, None], 0.0)
    return weights


def _conditional(model: SoftmaxModel, theta, x, kind: InfoKind,
                 coarsening: Optional[CoarseningMap] = None) -> InfoMatrix:
    eta, jac = _posterior_and_jacobian(model, theta, x)
    weight = logit_weights(eta[None, :], kind, coarsening)[0]
    return InfoMatrix(entries=jac.T @ weight @ jac, kind=kind)


# CLOSED FORMS #


def fisher_multiclass(model: SoftmaxModel, theta, x) -> InfoMatrix:
    """
    Conditional expected Fisher information of the multiclass likelihood, J_f^T (Diag(eta) - eta eta^T) J_f
    """
    return _conditional(model, theta, x, InfoKind.multiclass)


def fisher_binary(model: SoftmaxModel, theta, x, c: int) -> InfoMatrix:
    """
    Conditional expected Fisher information of the collapsed-binary likelihood,
    J_f^T (eta_c / (1 - eta_c)) (e_c - eta)(e_c - eta)^T J_f
    """
    return _conditional(model, theta, x, InfoKind.binary, CoarseningMap(target_class=c))


def fisher_gap(model: SoftmaxModel, theta, x, c: int) -> InfoMatrix:
    """
    Information lost by collapsing to target-vs-rest, (1 - eta_c) J_f^T (Diag(pi) - pi pi^T) J_f
    """
    return _conditional(model, theta, x, InfoKind.gap, CoarseningMap(target_class=c))


def missing_information(model: SoftmaxModel, theta, x, coarsening: CoarseningMap) -> InfoMatrix:
    """
    Expected conditional variance of the multiclass score given the coarse label,
    sum_z p(z | x) Var_{y | z}(s_Y), by finite sums over labels
    """
    return _conditional(model, theta, x, InfoKind.missing, coarsening)


def gap_rank(model: SoftmaxModel, theta, x, c: int, rtol: float = 1e-9) -> int:
    """
    Number of eigenvalues of the gap term above ``rtol`` times its largest one
    """
    eigenvalues = fisher_gap(model, theta, x, c).eigenvalues
    top = max(float(eigenvalues[-1]), 0.0)
    if top == 0.0:
        return 0
    return int(np.sum(eigenvalues > rtol * top))


# ORACLES #


def oracle_fisher(model: SoftmaxModel, theta, x, coarsening: Optional[CoarseningMap] = None) -> InfoMatrix:
    """
    Exhaustive expectation of score outer products over the posterior of the (possibly coarsened) label. Labels are
    finite, so this is an exact finite sum rather than a Monte-Carlo estimate

    :param model: Model family
    :param theta: Parameter vector
    :param x: Input
    :param coarsening: None for the multiclass label, a map for the coarse label
    :return: Fisher information at x
    """
    eta, jac = _posterior_and_jacobian(model, theta, x)
    total = np.zeros((model.param_count, model.param_count))

    if coarsening is None:
        for y in range(model.class_count):
            score = score_multiclass(model, theta, x, y)
            total += eta[y] * np.outer(score, score)
        return InfoMatrix(entries=total, kind=InfoKind.multiclass)

    for row in coarsening.indicator(model.class_count):
        mass = float(eta @ row)
        if mass <= 0.0:
            continue
        score = jac.T @ (row * eta / mass - eta)
        total += mass * np.outer(score, score)
    return InfoMatrix(entries=total, kind=InfoKind.binary)


def _label_log_probs(model: SoftmaxModel, theta: np.ndarray, x: np.ndarray,
                     coarsening: Optional[CoarseningMap]) -> np.ndarray:
    f = batch_logits(model, theta, x)[0]
    log_eta = f - logsumexp(f)
    if coarsening is None:
        return log_eta
    indicator = coarsening.indicator(model.class_count)
    return np.array([logsumexp(log_eta[row > 0]) for row in indicator])


def _log_prob_hessians(model: SoftmaxModel, theta, x, coarsening: Optional[CoarseningMap],
                       step: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    p = model.param_count

    def log_probs(i: int, si: float, j: int, sj: float) -> np.ndarray:
        shifted = theta.copy()
        shifted[i] += si * step
        shifted[j] += sj * step
        return _label_log_probs(model, shifted, x, coarsening)

    labels = _label_log_probs(model, theta, x, coarsening).size
    hessians = np.zeros((labels, p, p))
    for i in range(p):
        for j in range(i, p):
            value = (log_probs(i, 1, j, 1) - log_probs(i, 1, j, -1)
                     - log_probs(i, -1, j, 1) + log_probs(i, -1, j, -1)) / (4.0 * step ** 2)
            hessians[:, i, j] = value
            hessians[:, j, i] = value
    return hessians


def observed_information(model: SoftmaxModel, theta, x, label: int, coarsening: Optional[CoarseningMap] = None,
                         step: float = 1e-4) -> InfoMatrix:
    """
    Observed information -Hessian of log p(label | x) by central second differences

    :param label: Fine label, or coarse label when a coarsening map is given
    """
    hessians = _log_prob_hessians(model, theta, x, coarsening, step)
    if not 0 <= label < hessians.shape[0]:
        raise InvalidInputError(f"Label {label} out of range")
    return InfoMatrix(entries=-hessians[label], kind=InfoKind.observed)


def expected_observed_information(model: SoftmaxModel, theta, x, coarsening: Optional[CoarseningMap] = None,
                                  step: float = 1e-4) -> InfoMatrix:
    """
    Posterior expectation of the finite-difference observed information
    """
    check_inputs(model, x)
    hessians = _log_prob_hessians(model, theta, x, coarsening, step)
    eta = softmax_array(batch_logits(model, theta, x))[0]
    weights = eta if coarsening is None else coarsening.indicator(model.class_count) @ eta
    return InfoMatrix(entries=-np.einsum("l,lij->ij", weights, hessians), kind=InfoKind.observed)


# AVERAGING AND ORDERING #


def expected_fisher(model: SoftmaxModel, theta, inputs, kind: InfoKind = InfoKind.multiclass,
                    coarsening: Optional[CoarseningMap] = None) -> InfoMatrix:
    """
    Average of conditional information matrices over an input sample (the empirical p(X))

    :param model: Model family
    :param theta: Parameter vector
    :param inputs: (m, d) inputs, m >= 1
    :param kind: Which conditional matrix to average
    :param coarsening: Coarsening map for coarsened kinds
    :return: Averaged matrix
    """
    x = check_inputs(model, inputs)
    m = x.shape[0]
    if m < 1:
        raise InvalidInputError("expected_fisher needs at least one input")

    total = np.zeros((model.param_count, model.param_count))
    for start in range(0, m, CHUNK_SIZE):
        chunk = x[start:start + CHUNK_SIZE]
        eta = softmax_array(batch_logits(model, theta, chunk))
        jac = batch_logit_jacobian(model, theta, chunk)
        weights = logit_weights(eta, kind, coarsening)
        total += np.einsum("nkp,nkl,nlq->pq", jac, weights, jac, optimize=True)
    return InfoMatrix(entries=total / m, kind=kind)


def loewner_ge(a: InfoMatrix, b: InfoMatrix, tol: float = 1e-8) -> LoewnerVerdict:
    """
    Decide A >= B in the Loewner order: lambda_min((A - B) symmetrized) >= -tol

    :param a: Left-hand matrix
    :param b: Right-hand matrix
    :param tol: Absolute eigenvalue tolerance
    :return: Verdict with the minimum eigenvalue of the difference
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"Cannot compare {a.dim}x{a.dim} with {b.dim}x{b.dim}")
    diff = a.entries - b.entries
    min_eig = float(np.linalg.eigvalsh((diff + diff.T) / 2)[0])
    return LoewnerVerdict(holds=min_eig >= -tol, min_eig=min_eig)
