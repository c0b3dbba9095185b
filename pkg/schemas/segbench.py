from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from schemas.core import Architecture, SoftmaxModel
from schemas.metrics import MetricsConvention
from schemas.utils import (FloatGrid, FloatVector, Fraction, IntGrid, NonNegativeFloat, NonNegativeInt,
                           PositiveFloat, PositiveInt)

BACKGROUND = 0
LESION = 1
HOST_ORGAN = 2
NEIGHBOR_ORGAN = 3
MIMIC = 4
SCENE_CLASSES = ("background", "lesion", "organ", "neighbor", "mimic")
AUX_IDS = (HOST_ORGAN, NEIGHBOR_ORGAN, MIMIC)


CountRange = tuple[NonNegativeInt, NonNegativeInt]
SizeRange = tuple[PositiveFloat, PositiveFloat]


# SCENES #


class LesionPlacement(Enum):
    inside_organ = "inside-organ"
    adjacent_to_organ = "adjacent-to-organ"


class SceneConfig(BaseModel):
    """
    Synthetic scene layout. A host organ (id 2) contains or borders the lesions (id 1), a bright neighbouring organ
    (id 3) sits next to it, and mimics (id 4) with lesion intensity are scattered over the residual background.
    Sizes are ellipse semi-axes in pixels.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    height: PositiveInt = 96
    width: PositiveInt = 96
    spacing: tuple[PositiveFloat, PositiveFloat] = (1.0, 1.0)

    organ_count: CountRange = (1, 1)
    organ_size: SizeRange = (20.0, 28.0)
    neighbor_count: CountRange = (1, 1)
    neighbor_size: SizeRange = (10.0, 16.0)
    lesion_count: CountRange = (1, 3)
    lesion_size: SizeRange = (2.0, 3.5)
    placement: LesionPlacement = LesionPlacement.inside_organ
    mimic_count: CountRange = (3, 5)
    mimic_size: SizeRange = (2.0, 4.0)

    background_mean: float = 0.0
    lesion_mean: float = 1.0
    organ_mean: float = 0.4
    neighbor_mean: float = 1.6
    mimic_mean: Optional[float] = None
    texture: NonNegativeFloat = 0.1
    noise: NonNegativeFloat = 0.15

    max_retries: PositiveInt = 200

    @field_validator("organ_count", "organ_size", "neighbor_count", "neighbor_size", "lesion_count", "lesion_size",
                     "mimic_count", "mimic_size")
    @classmethod
    def _ordered(cls, value):
        if value[0] > value[1]:
            raise ValueError(f"Range minimum {value[0]} exceeds maximum {value[1]}")
        return value

    @model_validator(mode="after")
    def _fits(self):
        if self.lesion_count[1] > 0 and self.organ_count[0] < 1:
            raise ValueError("Lesions need at least one host organ")
        if 2 * self.organ_size[1] >= min(self.height, self.width):
            raise ValueError("Organs do not fit into the image")
        return self

    @property
    def class_means(self) -> np.ndarray:
        mimic = self.lesion_mean if self.mimic_mean is None else self.mimic_mean
        return np.array([self.background_mean, self.lesion_mean, self.organ_mean, self.neighbor_mean, mimic])


class LabeledImage(BaseModel):
    """
    Intensity image with a dense label map. Label ids index ``class_names``
    """
    model_config = ConfigDict(frozen=True)

    intensities: FloatGrid
    labels: IntGrid
    class_names: tuple[str, ...] = SCENE_CLASSES
    spacing: tuple[PositiveFloat, PositiveFloat] = (1.0, 1.0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.intensities.shape != self.labels.shape:
            raise ValueError("Intensities and labels must have the same shape")
        if self.labels.min() < 0 or self.labels.max() >= len(self.class_names):
            raise ValueError(f"Label ids must lie in 0..{len(self.class_names) - 1}")
        return self

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def present(self) -> set[int]:
        return set(np.unique(self.labels).tolist())


# LABEL SCHEMES #


class SchemeKind(Enum):
    binary = "binary"
    backsplit = "backsplit"
    virtual = "virtual"
    partial = "partial"
    aux_sweep = "aux-sweep"


class LabelScheme(BaseModel):
    """
    How scene labels become training labels. Model class 0 is always background and 1 the target; auxiliary ids
    that are kept become classes 2, 3, ... in the order of ``aux_ids``
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: SchemeKind = SchemeKind.binary
    aux_ids: tuple[int, ...] = AUX_IDS
    fraction: Fraction = 1.0
    prefix: NonNegativeInt = 1
    extra_channels: PositiveInt = 1
    label_noise: Fraction = 0.0

    @field_validator("aux_ids")
    @classmethod
    def _distinct_aux(cls, value):
        if len(set(value)) != len(value) or any(i <= LESION for i in value):
            raise ValueError("Auxiliary ids must be distinct and greater than 1")
        return value

    @model_validator(mode="after")
    def _prefix_fits(self):
        if self.kind is SchemeKind.aux_sweep and self.prefix > len(self.aux_ids):
            raise ValueError(f"Prefix {self.prefix} exceeds the {len(self.aux_ids)} auxiliary ids")
        return self

    @classmethod
    def from_name(cls, name: str, aux_ids: tuple[int, ...] = AUX_IDS, label_noise: float = 0.0) -> "LabelScheme":
        """
        Parse a scheme name as written in configuration files: ``binary``, ``backsplit``, ``virtual`` or
        ``virtual-<channels>``, ``partial-<fraction>`` and ``aux-<count>``

        :param name: Scheme name
        :param aux_ids: Auxiliary scene ids the scheme may keep
        :param label_noise: Per-structure boundary perturbation probability
        :return: Label scheme
        """
        base, _, arg = name.strip().partition("-")
        common = {"aux_ids": aux_ids, "label_noise": label_noise}
        try:
            if base in ("binary", "backsplit") and not arg:
                return cls(kind=SchemeKind(base), **common)
            if base == "virtual":
                return cls(kind=SchemeKind.virtual, extra_channels=int(arg) if arg else 1, **common)
            if base == "partial" and arg:
                return cls(kind=SchemeKind.partial, fraction=float(arg), **common)
            if base == "aux" and arg:
                return cls(kind=SchemeKind.aux_sweep, prefix=int(arg), **common)
        except ValueError as e:
            raise ValueError(f"Invalid scheme {name!r}: {e}") from e
        raise ValueError(f"Unknown scheme {name!r}")

    @property
    def name(self) -> str:
        if self.kind is SchemeKind.virtual and self.extra_channels != 1:
            return f"virtual-{self.extra_channels}"
        if self.kind is SchemeKind.partial:
            return f"partial-{self.fraction:g}"
        if self.kind is SchemeKind.aux_sweep:
            return f"aux-{self.prefix}"
        return self.kind.value

    @property
    def kept_aux(self) -> tuple[int, ...]:
        """
        Auxiliary ids that can reach the model (on at least one image for partial schemes)
        """
        if self.kind in (SchemeKind.binary, SchemeKind.virtual):
            return ()
        if self.kind is SchemeKind.aux_sweep:
            return self.aux_ids[:self.prefix]
        if self.kind is SchemeKind.partial and self.fraction == 0.0:
            return ()
        return self.aux_ids

    @property
    def class_count(self) -> int:
        extra = self.extra_channels if self.kind is SchemeKind.virtual else 0
        return 2 + len(self.kept_aux) + extra

    @property
    def collapses_to_binary(self) -> bool:
        return self.kind in (SchemeKind.binary, SchemeKind.virtual) or not self.kept_aux


# SEGMENTERS #


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    architecture: Architecture = Architecture.linear
    hidden_width: PositiveInt = 16


class TrainConfig(BaseModel):
    """
    Mini-batch SGD with momentum over a fixed pixel pool. The learning rate decays as lr * (1 - t / T) ** poly_power
    over the T steps of the run
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: PositiveInt = 60
    batch_size: PositiveInt = 512
    lr: PositiveFloat = 0.01
    momentum: float = Field(default=0.99, ge=0, lt=1)
    weight_decay: NonNegativeFloat = 3e-5
    poly_power: NonNegativeFloat = 0.9
    pixels_per_image: PositiveInt = 800
    foreground_fraction: Fraction = 0.2
    loss_tol: PositiveFloat = 1e-2


class WarmStart(BaseModel):
    """
    Initialize from a trained segmenter: shared classes are copied, new class channels start at zero
    """
    model_config = ConfigDict(frozen=True)

    source: "Segmenter"
    lr_scale: PositiveFloat = 0.1


class Checkpoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    epoch: PositiveInt
    theta: FloatVector


class Segmenter(BaseModel):
    """
    Pixel classifier over standardized features, with the scheme it was trained under
    """
    model_config = ConfigDict(frozen=True)

    model: SoftmaxModel
    theta: FloatVector
    scheme: LabelScheme
    feature_shift: FloatVector
    feature_scale: FloatVector
    epochs: int
    final_loss: float
    converged: bool
    checkpoints: tuple[Checkpoint, ...] = ()

    @model_validator(mode="after")
    def _matches_scheme(self):
        if self.model.class_count != self.scheme.class_count:
            raise ValueError(f"Model has {self.model.class_count} classes, scheme {self.scheme.name} needs "
                             f"{self.scheme.class_count}")
        if self.theta.size != self.model.param_count:
            raise ValueError("Parameter vector does not match the model")
        if self.feature_shift.size != self.model.feature_dim or self.feature_scale.size != self.model.feature_dim:
            raise ValueError("Feature normalization does not match the model")
        return self

    def at_checkpoint(self, epoch: int) -> "Segmenter":
        for checkpoint in self.checkpoints:
            if checkpoint.epoch == epoch:
                return self.model_copy(update={"theta": checkpoint.theta, "epochs": epoch, "checkpoints": ()})
        raise KeyError(epoch)


# BENCHMARKS #


class BenchConfig(BaseModel):
    """
    Benchmark of label schemes. Every scheme is trained on the same scenes and pixel pools for each seed; the first
    scheme is the baseline of the pairwise deltas. Schemes are given by name (see ``LabelScheme.from_name``) and
    share ``aux_ids`` and ``label_noise``. The first ``export_scenes`` test scenes of seed 0 are exported as text grids
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    scene: SceneConfig = SceneConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    schemes: list[str] = Field(default_factory=lambda: ["binary", "backsplit"])
    aux_ids: tuple[int, ...] = AUX_IDS
    label_noise: Fraction = 0.0
    scene_count: PositiveInt = 60
    export_scenes: NonNegativeInt = 0
    test_fraction: float = Field(default=1 / 3, gt=0, lt=1)
    seeds: PositiveInt = 10
    target_class: int = LESION
    metrics: MetricsConvention = MetricsConvention()

    @model_validator(mode="after")
    def _valid(self):
        if not self.schemes:
            raise ValueError("At least one scheme is required")
        names = [scheme.name for scheme in self.label_schemes]
        if len(set(names)) != len(names):
            raise ValueError(f"Scheme names must be unique, got {names}")
        if self.train_scenes < 1:
            raise ValueError("The split leaves no training scenes")
        return self

    @property
    def label_schemes(self) -> list[LabelScheme]:
        return [LabelScheme.from_name(name, self.aux_ids, self.label_noise) for name in self.schemes]

    @property
    def test_scenes(self) -> int:
        return max(1, round(self.scene_count * self.test_fraction))

    @property
    def train_scenes(self) -> int:
        return self.scene_count - self.test_scenes


class FinetuneConfig(BaseModel):
    """
    Fine-tuning curve: a binary model trained for ``bench.train.epochs`` is warm-started into ``scheme`` and
    evaluated at each checkpoint
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    bench: BenchConfig = BenchConfig(seeds=5)
    scheme: str = "backsplit"
    checkpoints: tuple[PositiveInt, ...] = (50, 100, 150, 200, 250)
    lr_scale: PositiveFloat = 0.1

    @field_validator("checkpoints")
    @classmethod
    def _increasing(cls, value):
        if not value or list(value) != sorted(set(value)):
            raise ValueError("Checkpoints must be strictly increasing")
        return value

    @model_validator(mode="after")
    def _valid_scheme(self):
        if self.label_scheme.collapses_to_binary:
            raise ValueError(f"Fine-tuning needs a scheme with auxiliary classes, got {self.scheme}")
        return self

    @property
    def label_scheme(self) -> LabelScheme:
        return LabelScheme.from_name(self.scheme, self.bench.aux_ids, self.bench.label_noise)


class BenchRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    scheme: str
    seed: int
    mean_dice: float
    mean_hd95: float
    mean_nsd: float
    epochs: int
    batch_size: int
    converged: bool
    class_count: int
    param_overhead: int


class SchemeSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    scheme: str
    seeds: int
    mean_dice: float
    std_dice: float
    mean_hd95: float
    std_hd95: float
    mean_nsd: float
    std_nsd: float


class SchemeDelta(BaseModel):
    """
    Paired comparison of a scheme with the baseline; ``wins`` counts seeds with higher Dice, ties excluded
    """
    model_config = ConfigDict(frozen=True)

    scheme: str
    baseline: str
    dice_delta: float
    hd95_delta: float
    nsd_delta: float
    wins: int
    losses: int
    sign_test_p: float


class BenchReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: list[BenchRow]
    summaries: list[SchemeSummary]
    deltas: list[SchemeDelta]

    def summary(self, scheme: str) -> SchemeSummary:
        for summary in self.summaries:
            if summary.scheme == scheme:
                return summary
        raise KeyError(scheme)


class FinetuneRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int
    scheme: str
    epochs: int
    mean_dice: float
    mean_hd95: float
    mean_nsd: float


class FinetuneReport(BaseModel):
    """
    Fine-tuning rows per (seed, scheme, checkpoint). ``baseline`` holds the binary segmenter every run started from,
    which counts as zero fine-tuning epochs
    """
    model_config = ConfigDict(frozen=True)

    baseline: list[BenchRow]
    rows: list[FinetuneRow]

    def mean_dice(self, scheme: str, epochs: int) -> float:
        if epochs == 0:
            return float(np.mean([row.mean_dice for row in self.baseline]))
        values = [row.mean_dice for row in self.rows if row.scheme == scheme and row.epochs == epochs]
        if not values:
            raise KeyError((scheme, epochs))
        return float(np.mean(values))

    @property
    def schemes(self) -> list[str]:
        return list(dict.fromkeys(row.scheme for row in self.rows))

    @property
    def checkpoints(self) -> list[int]:
        return sorted({row.epochs for row in self.rows})

    def curve(self, scheme: str) -> list[tuple[int, float]]:
        """
        Mean Dice over seeds at the start point and at every checkpoint
        """
        return [(epochs, self.mean_dice(scheme, epochs)) for epochs in [0, *self.checkpoints]]


WarmStart.model_rebuild()
