import logging
from typing import NamedTuple

import numpy as np

from lab.estimation import default_true_theta, efficiency_report, replicate_mle
from lab.errors import DimensionMismatchError
from lab.io import read_matrix, write_efficiency_summary, write_matrix, write_trials
from routes.utils import RunContext
from schemas.core import SoftmaxModel
from schemas.estimation import DistributionKind, InputDistribution, LikelihoodMode
from schemas.experiment import ExperimentConfig, MleConfig

logger = logging.getLogger("coarsegrain.routes.mle")


class Problem(NamedTuple):
    model: SoftmaxModel
    true_theta: np.ndarray
    distribution: InputDistribution
    probe_x: np.ndarray


def build_problem(cfg: MleConfig, seed: int) -> Problem:
    """
    Model, true parameters, input law and probe point of an MLE configuration
    """
    model = cfg.softmax_model
    if cfg.true_theta is None:
        true_theta = default_true_theta(model, seed, cfg.theta_scale)
    else:
        true_theta = np.array(cfg.true_theta)
    pool = read_matrix(cfg.pool_file) if cfg.distribution is DistributionKind.fixed_pool else None
    if pool is not None and pool.shape[1] != cfg.feature_dim:
        raise DimensionMismatchError(f"Pool {cfg.pool_file} has {pool.shape[1]} columns, expected {cfg.feature_dim}")
    distribution = InputDistribution(kind=cfg.distribution, dim=cfg.feature_dim, pool=pool)
    probe_x = np.zeros(cfg.feature_dim) if cfg.probe is None else np.array(cfg.probe)
    return Problem(model, true_theta, distribution, probe_x)


def run(cfg: ExperimentConfig, ctx: RunContext) -> bool:
    """
    Fit both arms on shared datasets and compare them. The run fails when the delta-method ordering does not hold;
    the empirical verdict is reported, not asserted
    """
    mle = cfg.mle
    problem = build_problem(mle, cfg.seed)

    studies = [replicate_mle(problem.model, problem.true_theta, problem.distribution, mle.n, mle.trials, mode,
                             mle.fit, cfg.seed, problem.probe_x, mle.target_class, ctx.jobs)
               for mode in (LikelihoodMode.multiclass, LikelihoodMode.binary)]
    for study in studies:
        write_trials(ctx.path(f"trials_{study.mode.value}.csv"), study)

    report = efficiency_report(studies[0], studies[1], problem.model, mle.fisher_samples, mle.bootstrap_resamples)
    write_efficiency_summary(ctx.path("efficiency_summary.csv"), report)
    for arm in report.arms:
        write_matrix(ctx.path(f"covariance_{arm.mode.value}_empirical.csv"), arm.empirical_cov)
        write_matrix(ctx.path(f"covariance_{arm.mode.value}_theoretical.csv"), arm.theoretical_cov)

    if not report.theoretical_ordering_holds:
        logger.warning("Delta-method variance of the multiclass arm exceeds the binary arm")
    return report.theoretical_ordering_holds
