import logging
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from app.deps import parallel_map
from lab.core import (batch_logits, batch_probabilities, center_parameters, check_theta, logit_jacobian,
                      predict, softmax_array, vector_jacobian_product)
from lab.errors import (DimensionMismatchError, FitError, InvalidInputError, SingularFisherError, StudyError)
from lab.information import expected_fisher
from lab.rng import derive_int, derive_rng
from schemas.core import CoarseningMap, Dataset, SoftmaxModel
from schemas.estimation import (ArmSummary, ConsistencyPoint, DeltaVariance, DistributionKind, EfficiencyReport,
                                FitConfig, FitResult, InputDistribution, LikelihoodMode, MLEStudy, OrderingVerdict,
                                TrialRecord)
from schemas.information import InfoKind, InfoMatrix

logger = logging.getLogger("coarsegrain.estimation")

SINGULAR_EIGENVALUE = 1e-10
DELTA_ORDER_TOLERANCE = 1e-12
# Armijo comparisons allow this much relative rounding in the objective
ROUNDOFF = 64 * np.finfo(float).eps


# SAMPLING #


def sample_dataset(model: SoftmaxModel, true_theta, dist: InputDistribution, n: int, seed: int) -> Dataset:
    """
    Draw n i.i.d. pairs: X from ``dist`` and Y from the true posterior at X

    :param model: Model family
    :param true_theta: Data-generating parameters
    :param dist: Input distribution
    :param n: Sample size
    :param seed: Seed of this dataset
    :return: Dataset, a pure function of the arguments
    """
    if n < 1:
        raise InvalidInputError(f"Sample size must be at least 1, got {n}")
    if dist.dim != model.feature_dim:
        raise DimensionMismatchError(f"Input distribution has dimension {dist.dim}, model expects {model.feature_dim}")

    rng = derive_rng(seed, "sample")
    inputs = dist.draw(rng, n)
    eta = batch_probabilities(model, true_theta, inputs)
    u = rng.random(n)
    labels = np.minimum(np.sum(np.cumsum(eta, axis=1) < u[:, None], axis=1), model.class_count - 1)
    return Dataset(inputs=inputs, labels=labels.astype(np.int64))


def default_true_theta(model: SoftmaxModel, seed: int, scale: float = 1.0) -> np.ndarray:
    """
    Centered Gaussian parameters, used when an experiment does not pin the true parameters
    """
    theta = derive_rng(seed, "mle", "true-theta").normal(0.0, scale, model.param_count)
    return center_parameters(model, theta)


# FITTING #


def _coarsening(mode: LikelihoodMode, target_class: int) -> Optional[CoarseningMap]:
    return None if mode is LikelihoodMode.multiclass else CoarseningMap(target_class=target_class)


def _penalized(model: SoftmaxModel, theta: np.ndarray, dataset: Dataset, coarsening: Optional[CoarseningMap],
               ridge: float) -> tuple[float, np.ndarray]:
    """
    Ridge-penalized log-likelihood and its gradient. Coarse probabilities are computed from fiber-masked logits, so
    they stay exact when the fiber mass underflows
    """
    f = batch_logits(model, theta, dataset.inputs)
    rows = np.arange(dataset.n)
    log_norm = logsumexp(f, axis=1)
    if coarsening is None:
        log_probs = f[rows, dataset.labels] - log_norm
        target = np.zeros_like(f)
        target[rows, dataset.labels] = 1.0
    else:
        indicator = coarsening.indicator(model.class_count)
        fiber = indicator[(dataset.labels == coarsening.target_class).astype(np.int64)] if coarsening.canonical \
            else indicator[np.asarray(coarsening.mapping)[dataset.labels]]
        masked = np.where(fiber > 0, f, -np.inf)
        log_probs = logsumexp(masked, axis=1) - log_norm
        target = softmax_array(masked)
    residual = target - softmax_array(f)

    value = float(np.sum(log_probs)) - 0.5 * ridge * float(theta @ theta)
    grad = vector_jacobian_product(model, theta, dataset.inputs, residual) - ridge * theta
    return value, grad


def fit_mle(model: SoftmaxModel, dataset: Dataset, mode: LikelihoodMode, cfg: FitConfig, init,
            target_class: int = 1) -> FitResult:
    """
    Maximize the ridge-penalized multiclass or collapsed-binary log-likelihood over the full parameter vector by
    gradient ascent. Each iteration tries the Barzilai-Borwein step first and backtracks until the Armijo condition
    holds

    :param model: Model family, shared by both likelihoods
    :param dataset: Training samples with fine labels
    :param mode: multiclass, or binary for the target-vs-rest likelihood
    :param cfg: Optimizer settings
    :param init: Starting parameters
    :param target_class: 0-based target class of the binary likelihood
    :return: Fitted parameters and the convergence record
    """
    if dataset.labels.max() >= model.class_count:
        raise DimensionMismatchError(f"Labels exceed the model's {model.class_count} classes")
    if not 0 <= target_class < model.class_count:
        raise InvalidInputError(f"Target class {target_class} out of range")

    coarsening = _coarsening(mode, target_class)
    n = dataset.n
    theta = check_theta(model, init).copy()
    value, grad = _penalized(model, theta, dataset, coarsening, cfg.ridge)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise FitError(f"Objective is not finite at the initial parameters ({mode.value} arm)")

    step = cfg.initial_step / n
    prev_theta, prev_grad = None, None
    iterations = 0
    converged = False

    while True:
        grad_norm = float(np.max(np.abs(grad))) / n
        if grad_norm <= cfg.grad_tol:
            converged = True
            break
        if iterations >= cfg.max_iters:
            break

        if prev_theta is not None:
            s = theta - prev_theta
            curvature = -float(s @ (grad - prev_grad))
            if curvature > 0:
                step = float(s @ s) / curvature

        slope = float(grad @ grad)
        slack = ROUNDOFF * max(1.0, abs(value))
        accepted = False
        while not accepted:
            candidate = theta + step * grad
            if np.all(np.isfinite(candidate)):
                cand_value, cand_grad = _penalized(model, candidate, dataset, coarsening, cfg.ridge)
                accepted = np.isfinite(cand_value) and cand_value >= value + cfg.armijo * step * slope - slack
            if not accepted:
                step *= cfg.shrink
                if step < cfg.min_step:
                    break
        if not accepted:
            logger.debug(f"Line search stalled after {iterations} iterations, gradient norm {grad_norm:.3e}")
            break
        if not np.all(np.isfinite(cand_grad)):
            raise FitError(f"Gradient is not finite after {iterations + 1} iterations ({mode.value} arm)")

        prev_theta, prev_grad = theta, grad
        theta, value, grad = candidate, cand_value, cand_grad
        iterations += 1

    return FitResult(theta=theta, converged=converged, iterations=iterations, grad_norm=grad_norm, objective=value)


# REPLICATION #


def _fit_trial(task: tuple) -> TrialRecord:
    model, theta_star, dist, n, mode, cfg, seed, trial, probe_x, target_class = task
    dataset = sample_dataset(model, theta_star, dist, n, derive_int(seed, "mle", "dataset", trial))
    fit = fit_mle(model, dataset, mode, cfg, theta_star, target_class)
    tau = predict(model, fit.theta, probe_x).target(target_class)
    return TrialRecord(trial=trial, converged=fit.converged, iterations=fit.iterations, tau_hat=tau,
                       theta_hat=fit.theta)


def replicate_mle(model: SoftmaxModel, true_theta, dist: InputDistribution, n: int, trials: int,
                  mode: LikelihoodMode, cfg: FitConfig, seed: int, probe_x, target_class: int = 1,
                  jobs: int = 1) -> MLEStudy:
    """
    Independent fits on independent datasets. Trial t draws its data from the stream ("mle", "dataset", t), which
    does not depend on the mode, so a multiclass and a binary study with the same seed see the same datasets

    :param model: Model family
    :param true_theta: Data-generating parameters, stored centered
    :param dist: Input distribution
    :param n: Samples per trial
    :param trials: Number of trials, at least 2
    :param mode: Likelihood fitted in every trial
    :param cfg: Optimizer settings
    :param seed: Master seed
    :param probe_x: Input at which tau = eta_c is evaluated
    :param target_class: 0-based target class
    :param jobs: Worker processes
    :return: Study with one record per trial, in trial order
    """
    if trials < 2:
        raise InvalidInputError(f"A study needs at least two trials, got {trials}")
    probe_x = np.asarray(probe_x, dtype=float)
    if probe_x.shape != (model.feature_dim,):
        raise DimensionMismatchError(f"Probe input must have shape ({model.feature_dim},)")
    theta_star = center_parameters(model, true_theta)

    logger.info(f"Running {trials} {mode.value} trials at n={n} (seed {seed})")
    tasks = [(model, theta_star, dist, n, mode, cfg, seed, trial, probe_x, target_class) for trial in range(trials)]
    records = parallel_map(_fit_trial, tasks, jobs)

    study = MLEStudy(model=model, mode=mode, target_class=target_class, n=n, seed=seed, true_params=theta_star,
                     probe_x=probe_x, distribution=dist, fit_config=cfg, records=records)
    if study.excluded:
        logger.warning(f"{study.excluded} of {trials} {mode.value} trials did not converge and are excluded")
    return study


# DELTA METHOD #


def target_gradient(model: SoftmaxModel, theta, probe_x, c: int) -> np.ndarray:
    """
    G = grad_theta eta_c(x0) = J_f^T eta_c (e_c - eta)
    """
    eta = predict(model, theta, probe_x).probs
    direction = -eta
    direction[c] += 1.0
    return logit_jacobian(model, theta, probe_x).T @ (eta[c] * direction)


def _solve(entries: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        factor = linalg.cho_factor(entries)
    except linalg.LinAlgError:
        raise SingularFisherError("Fisher information is singular after ridge regularization")
    return linalg.cho_solve(factor, rhs)


def delta_variance(model: SoftmaxModel, theta_star, fisher: InfoMatrix, probe_x, c: int, ridge: float = 1e-8,
                   force_ridge: bool = False) -> DeltaVariance:
    """
    Delta-method variance G^T I^-1 G of tau = eta_c(x0). When the smallest eigenvalue of I is below 1e-10 the ridge
    is added to the diagonal first, and the amount is reported

    :param model: Model family
    :param theta_star: Parameters at which G is taken
    :param fisher: Information matrix I
    :param probe_x: Probe input x0
    :param c: 0-based target class
    :param ridge: Diagonal regularization for singular matrices
    :param force_ridge: Regularize even when I is well conditioned
    :return: Variance, the ridge that was added and G
    """
    if fisher.dim != model.param_count:
        raise DimensionMismatchError(f"Fisher matrix is {fisher.dim}x{fisher.dim}, model has {model.param_count} "
                                     f"parameters")
    if not 0 <= c < model.class_count:
        raise InvalidInputError(f"Target class {c} out of range")

    g = target_gradient(model, theta_star, probe_x, c)
    entries = fisher.symmetrized
    ridge_added = 0.0
    if force_ridge or fisher.min_eigenvalue < SINGULAR_EIGENVALUE:
        entries = entries + ridge * np.eye(fisher.dim)
        ridge_added = ridge
    if not np.any(g):
        return DeltaVariance(variance=0.0, ridge_added=ridge_added, gradient=g)
    return DeltaVariance(variance=float(g @ _solve(entries, g)), ridge_added=ridge_added, gradient=g)


def paired_delta_variances(model: SoftmaxModel, theta_star, fisher_a: InfoMatrix, fisher_b: InfoMatrix, probe_x,
                           c: int, ridge: float = 1e-8) -> tuple[DeltaVariance, DeltaVariance]:
    """
    Delta-method variances of two arms under the same regularization, so that Loewner ordering of the information
    matrices carries over to the variances
    """
    singular = min(fisher_a.min_eigenvalue, fisher_b.min_eigenvalue) < SINGULAR_EIGENVALUE
    if singular:
        logger.debug(f"Regularizing both information matrices with ridge {ridge:.1e}")
    return (delta_variance(model, theta_star, fisher_a, probe_x, c, ridge, force_ridge=singular),
            delta_variance(model, theta_star, fisher_b, probe_x, c, ridge, force_ridge=singular))


def theoretical_covariance(fisher: InfoMatrix, rcond: float = 1e-9) -> np.ndarray:
    """
    Asymptotic covariance of sqrt(n)(theta_hat - theta*): the inverse information on its identifiable subspace
    """
    return np.linalg.pinv(fisher.symmetrized, rcond=rcond, hermitian=True)


# REPORTING #


def _check_paired(a: MLEStudy, b: MLEStudy):
    problems = []
    if a.model != b.model:
        problems.append("model")
    if a.n != b.n:
        problems.append("n")
    if not np.array_equal(a.true_params, b.true_params):
        problems.append("true parameters")
    if not np.array_equal(a.probe_x, b.probe_x):
        problems.append("probe input")
    if a.target_class != b.target_class:
        problems.append("target class")
    if a.distribution.kind != b.distribution.kind or a.distribution.dim != b.distribution.dim:
        problems.append("input distribution")
    if a.fit_config != b.fit_config:
        problems.append("fit config")
    if a.trials != b.trials:
        problems.append("trial count")
    if problems:
        raise StudyError(f"Studies are not comparable: they differ in {', '.join(problems)}")
    if a.seed != b.seed:
        logger.warning("Studies use different seeds; bootstrap pairs are independent")
    for study in (a, b):
        if study.failed:
            raise StudyError(f"{study.mode.value} study excluded {study.excluded} of {study.trials} trials")


def fisher_inputs(study: MLEStudy, samples: int) -> np.ndarray:
    """
    Inputs over which the expected information of a study is averaged: the pool itself for a fixed pool, otherwise
    ``samples`` draws from the ("mle", "fisher-pool") stream
    """
    dist = study.distribution
    if dist.kind is DistributionKind.fixed_pool:
        return dist.pool
    return dist.draw(derive_rng(study.seed, "mle", "fisher-pool"), samples)


def _info_kind(mode: LikelihoodMode) -> InfoKind:
    return InfoKind.multiclass if mode is LikelihoodMode.multiclass else InfoKind.binary


def _arm(study: MLEStudy, fisher: InfoMatrix, delta: DeltaVariance, taus: np.ndarray) -> ArmSummary:
    thetas = np.array([center_parameters(study.model, r.theta_hat) for r in study.converged_records])
    scaled = np.sqrt(study.n) * (thetas - study.true_params)
    empirical = np.atleast_2d(np.cov(scaled, rowvar=False))
    theoretical = theoretical_covariance(fisher)
    error = np.linalg.norm(empirical - theoretical) / max(np.linalg.norm(theoretical), np.finfo(float).tiny)
    return ArmSummary(mode=study.mode, n=study.n, trials=study.trials, excluded=study.excluded,
                      empirical_var_tau=float(study.n * np.var(taus, ddof=1)), theoretical_var_tau=delta.variance,
                      ridge_added=delta.ridge_added, empirical_cov=(empirical + empirical.T) / 2,
                      theoretical_cov=(theoretical + theoretical.T) / 2, cov_relative_error=float(error))


def bootstrap_ratio(taus_a: np.ndarray, taus_b: np.ndarray, resamples: int, rng: np.random.Generator,
                    level: float = 0.95) -> tuple[float, float, float]:
    """
    Paired percentile bootstrap of Var(a) / Var(b)

    :return: (point estimate, lower bound, upper bound)
    """
    m = taus_a.size
    idx = rng.integers(0, m, size=(resamples, m))
    var_a = np.var(taus_a[idx], axis=1, ddof=1)
    var_b = np.var(taus_b[idx], axis=1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = var_a / var_b
    ratios = ratios[np.isfinite(ratios)]
    if ratios.size == 0:
        raise StudyError("Bootstrap variance ratio is undefined: the second arm has zero variance")
    tail = 100 * (1 - level) / 2
    low, high = np.percentile(ratios, [tail, 100 - tail])
    return float(np.var(taus_a, ddof=1) / np.var(taus_b, ddof=1)), float(low), float(high)


def efficiency_report(study_a: MLEStudy, study_b: MLEStudy, model: SoftmaxModel, fisher_samples: int = 20000,
                      bootstrap_resamples: int = 10_000) -> EfficiencyReport:
    """
    Compare two arms fitted on the same problem: empirical and theoretical covariances, delta-method variances of tau
    and a bootstrap confidence interval on the empirical variance ratio (first arm over second)

    :param study_a: First arm, usually multiclass
    :param study_b: Second arm, usually binary
    :param model: Model family of both studies
    :param fisher_samples: Inputs drawn to average the information matrices
    :param bootstrap_resamples: Paired bootstrap resamples
    :return: Report; swapping the arms inverts the ratio and the verdict
    """
    if study_a.model != model:
        raise StudyError("Studies were run with a different model")
    _check_paired(study_a, study_b)

    theta_star = study_a.true_params
    c = study_a.target_class
    inputs = fisher_inputs(study_a, fisher_samples)
    coarsening = CoarseningMap(target_class=c)
    fishers = [expected_fisher(model, theta_star, inputs, _info_kind(s.mode), coarsening)
               for s in (study_a, study_b)]
    delta_a, delta_b = paired_delta_variances(model, theta_star, fishers[0], fishers[1], study_a.probe_x, c)

    # Pairs are formed by trial index; a trial excluded from either arm is dropped from both
    paired = [(ra.tau_hat, rb.tau_hat) for ra, rb in zip(study_a.records, study_b.records)
              if ra.converged and rb.converged]
    if len(paired) < 2:
        raise StudyError("Fewer than two trials converged in both arms")
    taus_a, taus_b = (np.array(column) for column in zip(*paired))

    rng = derive_rng(study_a.seed, "mle", "bootstrap")
    ratio, low, high = bootstrap_ratio(taus_a, taus_b, bootstrap_resamples, rng)
    if high < 1.0:
        verdict = OrderingVerdict.less
    elif low > 1.0:
        verdict = OrderingVerdict.greater
    else:
        verdict = OrderingVerdict.inconclusive

    if study_a.mode is LikelihoodMode.binary and study_b.mode is LikelihoodMode.multiclass:
        holds = delta_b.variance <= delta_a.variance + DELTA_ORDER_TOLERANCE
    else:
        holds = delta_a.variance <= delta_b.variance + DELTA_ORDER_TOLERANCE
    theoretical_ratio = delta_a.variance / delta_b.variance if delta_b.variance > 0 else float("nan")

    logger.info(f"Variance ratio {ratio:.4f} [{low:.4f}, {high:.4f}], verdict {verdict.value}")
    return EfficiencyReport(arms=(_arm(study_a, fishers[0], delta_a, taus_a), _arm(study_b, fishers[1], delta_b, taus_b)),
                            ratio=ratio, ci_low=low, ci_high=high, theoretical_ratio=theoretical_ratio,
                            theoretical_ordering_holds=holds, verdict=verdict, seed=study_a.seed,
                            bootstrap_resamples=bootstrap_resamples, iteration_budget=study_a.fit_config.max_iters)


def consistency_sweep(model: SoftmaxModel, true_theta, dist: InputDistribution, sizes: Sequence[int], trials: int,
                      mode: LikelihoodMode, cfg: FitConfig, seed: int, probe_x, target_class: int = 1,
                      jobs: int = 1) -> list[ConsistencyPoint]:
    """
    Mean estimation error and bias of one arm across sample sizes. Each size runs under its own derived seed
    """
    points = []
    for n in sizes:
        study = replicate_mle(model, true_theta, dist, n, trials, mode, cfg, derive_int(seed, "mle", "size", n),
                              probe_x, target_class, jobs)
        thetas = np.array([center_parameters(model, r.theta_hat) for r in study.converged_records])
        if thetas.size == 0:
            raise StudyError(f"No trial converged at n={n}")
        errors = np.linalg.norm(thetas - study.true_params, axis=1)
        points.append(ConsistencyPoint(n=n, mode=mode, trials=trials, excluded=study.excluded,
                                       mean_error=float(errors.mean()),
                                       bias_norm=float(np.linalg.norm(thetas.mean(axis=0) - study.true_params))))
    return points
