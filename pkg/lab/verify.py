import logging
from typing import Callable, NamedTuple

import numpy as np
from pydantic import ValidationError

from app.deps import parallel_map
from lab.core import predict
from lab.errors import LabException
from lab.estimation import paired_delta_variances
from lab.information import (expected_fisher, expected_observed_information, fisher_binary, fisher_gap,
                             fisher_multiclass, loewner_ge, missing_information, oracle_fisher, project_score,
                             score_binary, score_multiclass)
from lab.rng import derive_rng
from schemas.core import Architecture, CoarseningMap, SoftmaxModel
from schemas.information import InfoKind
from schemas.verify import CheckResult, VerifyConfig

logger = logging.getLogger("coarsegrain.verify")

# Logit offset that drives a class probability to exactly zero
SUPPRESSED_BIAS = -1000.0


class Instance(NamedTuple):
    model: SoftmaxModel
    theta: np.ndarray
    x: np.ndarray
    c: int


def random_instance(seed: int, check: str, index: int, cfg: VerifyConfig, class_count: int | None = None) -> Instance:
    """
    Seeded random model, parameters, input and target class. Even indices are linear models, odd ones hidden-layer
    models
    """
    rng = derive_rng(seed, "verify", check, index)
    k = class_count or int(rng.integers(2, 9))
    d = int(rng.integers(1, 6))
    architecture = Architecture.linear if index % 2 == 0 else Architecture.hidden
    model = SoftmaxModel(feature_dim=d, class_count=k, architecture=architecture, hidden_width=cfg.hidden_width)
    theta = rng.standard_normal(model.param_count)
    x = rng.standard_normal(d)
    return Instance(model, theta, x, int(rng.integers(0, k)))


def _scaled_error(a: np.ndarray, b: np.ndarray) -> float:
    """
    Largest entrywise difference, relative to the magnitude of b once it exceeds 1
    """
    return float(np.max(np.abs(a - b), initial=0.0) / max(1.0, float(np.max(np.abs(b), initial=0.0))))


class _Tally:
    def __init__(self):
        self.instances = 0
        self.max_error = 0.0
        self.failures = []

    def add(self, error: float, ok: bool = True, note: str = ""):
        self.instances += 1
        self.max_error = max(self.max_error, error)
        if not ok and note:
            self.failures.append(note)


# CHECKS #


def check_score_projection(seed: int, cfg: VerifyConfig) -> tuple[_Tally, float]:
    tally = _Tally()
    for i in range(cfg.instances):
        model, theta, x, c = random_instance(seed, "score-projection", i, cfg)
        coarsening = CoarseningMap(target_class=c)
        error = max(_scaled_error(project_score(model, theta, x, z, coarsening), score_binary(model, theta, x, z, c))
                    for z in (0, 1))
        tally.add(error)
    return tally, cfg.tolerance


def check_zero_mean(seed: int, cfg: VerifyConfig) -> tuple[_Tally, float]:
    tally = _Tally()
    for i in range(cfg.instances):
        model, theta, x, c = random_instance(seed, "zero-mean", i, cfg)
        eta = predict(model, theta, x).probs
        full = sum(eta[y] * score_multiclass(model, theta, x, y) for y in range(model.class_count))
        binary = eta[c] * score_binary(model, theta, x, 1, c) + (1 - eta[c]) * score_binary(model, theta, x, 0, c)
        tally.add(max(float(np.max(np.abs(full))), float(np.max(np.abs(binary)))))
    return tally, cfg.tolerance


def check_decomposition(seed: int, cfg: VerifyConfig) -> tuple[_Tally, float]:
    tally = _Tally()
    for i in range(cfg.instances):
        model, theta, x, c = random_instance(seed, "decomposition", i, cfg)
        full = fisher_multiclass(model, theta, x)
        binary = fisher_binary(model, theta, x, c)
        missing = missing_information(model, theta, x, CoarseningMap(target_class=c))
        gap = fisher_gap(model, theta, x, c)
        tally.add(max(_scaled_error(binary.entries + missing.entries, full.entries),
                      _scaled_error(gap.entries, missing.entries)))
    return tally, cfg.tolerance


def check_loewner(seed: int, cfg: VerifyConfig) -> tuple[_Tally, float]:
    tally = _Tally()
    for i in range(cfg.instances):
        model, theta, x, c = random_instance(seed, "decomposition", i, cfg)
        verdict = loewner_ge(fisher_multiclass(model, theta, x), fisher_binary(model, theta, x, c),
                             cfg.psd_tolerance)
        # Error is how far the smallest eigenvalue of the difference falls below zero
        tally.add(max(0.0, -verdict.min_eig), verdict.holds, f"instance {i}: min eigenvalue {verdict.min_eig:.3e}")
    return tally, cfg.psd_tolerance


def check_oracle(seed: int, cfg: VerifyConfig) -> tuple[_Tally, float]:
    tally = _Tally()
    for i in range(cfg.instances):
        model, theta, x, c = random_instance(seed, "oracle", i, cfg)
        full = _scaled_error(fisher_multiclass(model, theta, x).entries, oracle_fisher(model, theta, x).entries)
        binary = _scaled_error(fisher_binary(model, theta, x, c).entries,
                               oracle_fisher(model, theta, x, CoarseningMap(target_class=c)).entries)
        tally.add(max(full, binary))
    return tally, cfg.tolerance


def _single_support(seed: int, index: int, cfg: VerifyConfig) -> Instance:
    """
    Linear model with at least three classes where every non-target class but one has its bias suppressed
    """
    rng = derive_rng(seed, "verify", "single-support", index)
    model = SoftmaxModel(feature_dim=int(rng.integers(1, 6)), class_count=3 + index % 6)
    theta = rng.standard_normal(model.param_count)
    x = rng.standard_normal(model.feature_dim)
    c = int(rng.integers(0, model.class_count))
    survivor = (c + 1) % model.class_count
    block = model.feature_dim + 1
    for k in range(model.class_count):
        if k not in (c, survivor):
            theta[k * block + model.feature_dim] = SUPPRESSED_BIAS
    return Instance(model, theta, x, c)


def check_equality_cases(seed: int, cfg: VerifyConfig) -> tuple[_Tally, float]:
    tally = _Tally()
    for i in range(cfg.instances):
        if i % 2 == 0:
            model, theta, x, c = random_instance(seed, "equality", i, cfg, class_count=2)
        else:
            model, theta, x, c = _single_support(seed, i, cfg)
        tally.add(float(np.max(np.abs(fisher_gap(model, theta, x, c).entries))))
    return tally, cfg.tolerance


def check_observed_information(seed: int, cfg: VerifyConfig) -> tuple[_Tally, float]:
    tally = _Tally()
    for i in range(cfg.observed_instances):
        model, theta, x, c = random_instance(seed, "observed", i, cfg)
        for coarsening in (None, CoarseningMap(target_class=c)):
            oracle = oracle_fisher(model, theta, x, coarsening).entries
            observed = expected_observed_information(model, theta, x, coarsening).entries
            error = np.linalg.norm(observed - oracle) / max(float(np.linalg.norm(oracle)), 1e-12)
            tally.add(float(error))
    return tally, cfg.observed_tolerance


def _delta_configs(seed: int, cfg: VerifyConfig):
    for i in range(cfg.delta_configs):
        model, theta, x0, c = random_instance(seed, "delta", i, cfg)
        inputs = derive_rng(seed, "verify", "delta-inputs", i).standard_normal((cfg.fisher_inputs, model.feature_dim))
        full = expected_fisher(model, theta, inputs, InfoKind.multiclass)
        binary = expected_fisher(model, theta, inputs, InfoKind.binary, CoarseningMap(target_class=c))
        var_full, var_binary = paired_delta_variances(model, theta, full, binary, x0, c)
        yield i, model, theta, x0, c, var_full.variance, var_binary.variance


def check_delta_ordering(seed: int, cfg: VerifyConfig) -> tuple[_Tally, float]:
    tally = _Tally()
    for i, _, _, _, _, v_full, v_binary in _delta_configs(seed, cfg):
        excess = max(0.0, v_full - v_binary) / max(1.0, abs(v_binary))
        tally.add(excess, excess <= cfg.tolerance, f"config {i}: {v_full:.6e} > {v_binary:.6e}")
    return tally, cfg.tolerance


def check_delta_strictness(seed: int, cfg: VerifyConfig) -> tuple[_Tally, float]:
    """
    Where at least two non-target classes are active at the probe point, the multiclass variance must be smaller
    by the configured relative margin. The error is the shortfall below that margin
    """
    tally = _Tally()
    for i, model, theta, x0, c, v_full, v_binary in _delta_configs(seed, cfg):
        probs = predict(model, theta, x0)
        if probs.target(c) >= 1.0 - cfg.active_threshold:
            continue
        # Non-target classes under active_threshold give a gain below strict_margin and are not counted
        active = int(np.sum(probs.non_target(c) >= cfg.active_threshold))
        if active < 2 or v_binary <= 0:
            continue
        improvement = (v_binary - v_full) / v_binary
        shortfall = max(0.0, cfg.strict_margin - improvement)
        tally.add(shortfall, shortfall == 0.0, f"config {i}: relative improvement {improvement:.3e}")
    return tally, 0.0


CHECKS: dict[str, Callable[[int, VerifyConfig], tuple[_Tally, float]]] = {
    "score-projection": check_score_projection,
    "zero-mean-scores": check_zero_mean,
    "decomposition": check_decomposition,
    "loewner-order": check_loewner,
    "closed-form-vs-oracle": check_oracle,
    "equality-cases": check_equality_cases,
    "observed-vs-expected": check_observed_information,
    "delta-ordering": check_delta_ordering,
    "delta-strictness": check_delta_strictness,
}


def run_check(name: str, seed: int, cfg: VerifyConfig) -> CheckResult:
    """
    Run one check. Failures inside the check are reported in its result and never propagate
    """
    try:
        tally, tolerance = CHECKS[name](seed, cfg)
    except (LabException, ValidationError, np.linalg.LinAlgError) as e:
        logger.warning(f"Check {name} raised: {e}")
        return CheckResult(check=name, instances=0, max_error=float("nan"), tolerance=float("nan"), passed=False,
                           detail=str(e).splitlines()[0])
    passed = tally.max_error <= tolerance and not tally.failures
    if not passed:
        logger.warning(f"Check {name} failed: max error {tally.max_error:.3e} (tolerance {tolerance:.1e})")
    return CheckResult(check=name, instances=tally.instances, max_error=tally.max_error, tolerance=tolerance,
                       passed=passed, detail="; ".join(tally.failures[:3]))


def _check_task(task: tuple[str, int, VerifyConfig]) -> CheckResult:
    return run_check(*task)


def run_suite(seed: int, cfg: VerifyConfig | None = None, jobs: int = 1) -> list[CheckResult]:
    """
    Run every identity check, one task per check. Results come back in the order of ``CHECKS``
    """
    cfg = cfg or VerifyConfig()
    logger.info(f"Running {len(CHECKS)} identity checks (seed {seed})")
    return parallel_map(_check_task, [(name, seed, cfg) for name in CHECKS], jobs)
