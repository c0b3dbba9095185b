from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from schemas.core import Architecture, SoftmaxModel
from schemas.estimation import DistributionKind, FitConfig
from schemas.metrics import DEFAULT_NSD_TOLERANCE
from schemas.segbench import LESION, BenchConfig, FinetuneConfig
from schemas.utils import NonNegativeFloat, NonNegativeInt, PositiveFloat, PositiveInt
from schemas.verify import VerifyConfig

ARTIFACT_VERSION = "0.1.0"


class ExperimentKind(Enum):
    verify = "verify-identities"
    mle = "mle-study"
    segbench = "segbench"
    metrics = "metrics-eval"
    sweep = "sweep"


class MleConfig(BaseModel):
    """
    Monte-Carlo MLE study. Without ``true_theta`` the true parameters are drawn from the seed; without ``probe``
    tau is evaluated at the origin
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    class_count: int = Field(default=4, ge=2)
    feature_dim: PositiveInt = 2
    architecture: Architecture = Architecture.linear
    hidden_width: PositiveInt = 8
    reduced: bool = False
    true_theta: Optional[list[float]] = None
    theta_scale: PositiveFloat = 1.0
    probe: Optional[list[float]] = None
    target_class: NonNegativeInt = LESION
    n: PositiveInt = 4000
    trials: int = Field(default=300, ge=2)
    distribution: DistributionKind = DistributionKind.standard_gaussian
    pool_file: Optional[str] = None
    fisher_samples: PositiveInt = 20000
    bootstrap_resamples: PositiveInt = 10_000
    fit: FitConfig = FitConfig()

    @model_validator(mode="after")
    def _consistent(self):
        if self.target_class >= self.class_count:
            raise ValueError(f"Target class {self.target_class} out of range for {self.class_count} classes")
        if self.true_theta is not None and len(self.true_theta) != self.softmax_model.param_count:
            raise ValueError(f"true_theta needs {self.softmax_model.param_count} entries")
        if self.probe is not None and len(self.probe) != self.feature_dim:
            raise ValueError(f"probe needs {self.feature_dim} entries")
        if self.distribution is DistributionKind.fixed_pool and not self.pool_file:
            raise ValueError("fixed-pool distribution needs pool_file")
        return self

    @property
    def softmax_model(self) -> SoftmaxModel:
        return SoftmaxModel(feature_dim=self.feature_dim, class_count=self.class_count,
                            architecture=self.architecture, hidden_width=self.hidden_width, reduced=self.reduced)


class MetricsEvalConfig(BaseModel):
    """
    Metric evaluation of two label-grid files
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    prediction: str = ""
    ground_truth: str = ""
    target_class: NonNegativeInt = LESION
    tolerance: NonNegativeFloat = DEFAULT_NSD_TOLERANCE
    spacing: tuple[PositiveFloat, PositiveFloat] = (1.0, 1.0)


class SweepAxis(Enum):
    epochs = "epochs"
    aux_fraction = "aux_fraction"
    aux_count = "aux_count"
    n = "n"


DEFAULT_SWEEP_VALUES = {
    SweepAxis.epochs: [50, 100, 150, 200, 250],
    SweepAxis.aux_fraction: [0.0, 0.25, 0.5, 0.75, 1.0],
    SweepAxis.aux_count: [0, 1, 2, 3],
    SweepAxis.n: [500, 2000, 8000],
}


class SweepConfig(BaseModel):
    """
    One-axis sweep. Empty ``values`` means the default grid of the axis
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    axis: SweepAxis = SweepAxis.aux_fraction
    values: list[float] = Field(default_factory=list)

    @property
    def grid(self) -> list[float]:
        return list(self.values) or DEFAULT_SWEEP_VALUES[self.axis]

    @model_validator(mode="after")
    def _valid_values(self):
        grid = self.grid
        if self.axis is SweepAxis.aux_fraction and any(not 0 <= v <= 1 for v in grid):
            raise ValueError("Auxiliary fractions must lie in [0, 1]")
        if self.axis is not SweepAxis.aux_fraction and any(not float(v).is_integer() or v < 0 for v in grid):
            raise ValueError(f"Sweep values of {self.axis.value} must be non-negative integers")
        if self.axis in (SweepAxis.epochs, SweepAxis.n) and any(v < 1 for v in grid):
            raise ValueError(f"Sweep values of {self.axis.value} must be positive")
        return self


class ExperimentConfig(BaseModel):
    """
    Root of the experiment configuration. Every block has defaults; only ``kind`` is required
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ExperimentKind
    seed: NonNegativeInt = 0
    out_dir: Optional[str] = None
    verify: VerifyConfig = VerifyConfig()
    mle: MleConfig = MleConfig()
    segbench: BenchConfig = BenchConfig()
    finetune: FinetuneConfig = FinetuneConfig()
    metrics: MetricsEvalConfig = MetricsEvalConfig()
    sweep: SweepConfig = SweepConfig()

    @model_validator(mode="after")
    def _sweep_fits(self):
        if self.kind is not ExperimentKind.sweep:
            return self
        grid = self.sweep.grid
        if self.sweep.axis is SweepAxis.epochs and grid != sorted(set(grid)):
            raise ValueError("Epoch checkpoints of a sweep must be strictly increasing")
        if self.sweep.axis is SweepAxis.aux_count and max(grid) > len(self.segbench.aux_ids):
            raise ValueError(f"Auxiliary counts cannot exceed the {len(self.segbench.aux_ids)} auxiliary ids")
        if self.sweep_schemes and len(set(self.sweep_schemes)) != len(grid):
            raise ValueError("Sweep values must be distinct")
        return self

    @property
    def sweep_schemes(self) -> list[str]:
        """
        Scheme names benchmarked by an aux_fraction or aux_count sweep, one per grid value
        """
        if self.sweep.axis is SweepAxis.aux_fraction:
            return [f"partial-{v:g}" for v in self.sweep.grid]
        if self.sweep.axis is SweepAxis.aux_count:
            return [f"aux-{int(v)}" for v in self.sweep.grid]
        return []


class ManifestStatus(Enum):
    running = "running"
    complete = "complete"
    failed = "failed"


class RunManifest(BaseModel):
    """
    Record of one run: the configuration as it was resolved, the derived seeds and a checksum per output file
    """
    model_config = ConfigDict(frozen=True)

    status: ManifestStatus = ManifestStatus.running
    version: str = ARTIFACT_VERSION
    command: str
    config: dict[str, str]
    seeds: dict[str, int] = Field(default_factory=dict)
    outputs: dict[str, str] = Field(default_factory=dict)
    exit_code: Optional[int] = None


class PlotSeries(BaseModel):
    """
    (x, y) series for external plotting
    """
    model_config = ConfigDict(frozen=True)

    axis: str
    name: str
    quantity: str = "mean_dice"
    points: list[tuple[float, float]]

    @field_validator("axis")
    @classmethod
    def _known_axis(cls, value: str) -> str:
        if value not in {a.value for a in SweepAxis}:
            raise ValueError(f"Unknown plot axis {value}")
        return value
