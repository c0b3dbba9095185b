from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from schemas.core import SoftmaxModel
from schemas.utils import FloatMatrix, FloatVector, PositiveFloat, PositiveInt, NonNegativeFloat

MAX_EXCLUSION_RATE = 0.02


class DistributionKind(Enum):
    standard_gaussian = "standard-gaussian"
    uniform_cube = "uniform-cube"
    fixed_pool = "fixed-pool"


class LikelihoodMode(Enum):
    multiclass = "multiclass"
    binary = "binary"


class OrderingVerdict(Enum):
    less = "less"
    greater = "greater"
    inconclusive = "inconclusive"

    def inverted(self) -> "OrderingVerdict":
        return {OrderingVerdict.less: OrderingVerdict.greater,
                OrderingVerdict.greater: OrderingVerdict.less}.get(self, self)


class InputDistribution(BaseModel):
    """
    Input law p(X). ``uniform-cube`` is uniform on [-1, 1]^d, ``fixed-pool`` resamples rows of ``pool``
    """
    model_config = ConfigDict(frozen=True)

    kind: DistributionKind = DistributionKind.standard_gaussian
    dim: PositiveInt = 2
    pool: Optional[FloatMatrix] = None

    @model_validator(mode="after")
    def _pool_matches(self):
        if self.kind is DistributionKind.fixed_pool:
            if self.pool is None or self.pool.shape[0] < 1:
                raise ValueError("fixed-pool distribution needs a non-empty pool")
            if self.pool.shape[1] != self.dim:
                raise ValueError("Pool rows must have the distribution's dimension")
        return self

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind is DistributionKind.standard_gaussian:
            return rng.standard_normal((n, self.dim))
        if self.kind is DistributionKind.uniform_cube:
            return rng.uniform(-1.0, 1.0, (n, self.dim))
        return self.pool[rng.integers(0, self.pool.shape[0], n)]


class FitConfig(BaseModel):
    """
    Full-batch gradient ascent with Armijo backtracking. The first trial step of each iteration is the
    Barzilai-Borwein step (``initial_step / n`` on the first iteration)
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iters: PositiveInt = 10000
    grad_tol: PositiveFloat = 1e-9
    ridge: NonNegativeFloat = 1e-8
    initial_step: PositiveFloat = 1.0
    armijo: float = Field(default=1e-4, gt=0, lt=1)
    shrink: float = Field(default=0.5, gt=0, lt=1)
    min_step: PositiveFloat = 1e-20


class FitResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta: FloatVector
    converged: bool
    iterations: int
    grad_norm: float
    objective: float


class TrialRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    trial: int
    converged: bool
    iterations: int
    tau_hat: float
    theta_hat: FloatVector


class MLEStudy(BaseModel):
    """
    Replicated fits of one arm. ``target_class`` and class labels are 0-based
    """
    model_config = ConfigDict(frozen=True)

    model: SoftmaxModel
    mode: LikelihoodMode
    target_class: int
    n: PositiveInt
    seed: int
    true_params: FloatVector
    probe_x: FloatVector
    distribution: InputDistribution
    fit_config: FitConfig
    records: list[TrialRecord]

    @model_validator(mode="after")
    def _enough_trials(self):
        if len(self.records) < 2:
            raise ValueError("A study needs at least two trials")
        return self

    @property
    def trials(self) -> int:
        return len(self.records)

    @property
    def converged_records(self) -> list[TrialRecord]:
        return [record for record in self.records if record.converged]

    @property
    def excluded(self) -> int:
        return self.trials - len(self.converged_records)

    @property
    def failed(self) -> bool:
        return self.excluded > MAX_EXCLUSION_RATE * self.trials


class DeltaVariance(BaseModel):
    model_config = ConfigDict(frozen=True)

    variance: float
    ridge_added: float
    gradient: FloatVector


class ArmSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: LikelihoodMode
    n: int
    trials: int
    excluded: int
    empirical_var_tau: float
    theoretical_var_tau: float
    ridge_added: float
    empirical_cov: FloatMatrix
    theoretical_cov: FloatMatrix
    cov_relative_error: float


class EfficiencyReport(BaseModel):
    """
    Head-to-head comparison of two arms. Ratios are first arm over second arm
    """
    model_config = ConfigDict(frozen=True)

    arms: tuple[ArmSummary, ArmSummary]
    ratio: float
    ci_low: float
    ci_high: float
    theoretical_ratio: float
    theoretical_ordering_holds: bool
    verdict: OrderingVerdict
    seed: int
    bootstrap_resamples: int
    iteration_budget: int


class ConsistencyPoint(BaseModel):
    """
    Summary of one sample size in a consistency sweep
    """
    model_config = ConfigDict(frozen=True)

    n: int
    mode: LikelihoodMode
    trials: int
    excluded: int
    mean_error: float
    bias_norm: float
