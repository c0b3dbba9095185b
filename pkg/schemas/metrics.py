import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from schemas.utils import BoolGrid, FloatMatrix, Fraction, NonNegativeFloat, PositiveFloat

DEFAULT_NSD_TOLERANCE = 1.0


class BinaryMask(BaseModel):
    """
    Foreground mask with physical pixel spacing (row, col)
    """
    model_config = ConfigDict(frozen=True)

    pixels: BoolGrid
    spacing: tuple[PositiveFloat, PositiveFloat] = (1.0, 1.0)

    @field_validator("pixels")
    @classmethod
    def _non_empty_grid(cls, value: np.ndarray) -> np.ndarray:
        if value.shape[0] < 1 or value.shape[1] < 1:
            raise ValueError("Mask must have at least one row and one column")
        return value

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def empty(self) -> bool:
        return not self.pixels.any()

    @property
    def diagonal(self) -> float:
        """
        Image diagonal in physical units, reported as the surface distance when a surface is missing
        """
        return float(np.hypot(self.shape[0] * self.spacing[0], self.shape[1] * self.spacing[1]))


class SurfacePointSet(BaseModel):
    """
    Boundary pixels of a mask as (row, col) coordinates in physical units, in row-major order
    """
    model_config = ConfigDict(frozen=True)

    points: FloatMatrix

    @field_validator("points")
    @classmethod
    def _pairs(cls, value: np.ndarray) -> np.ndarray:
        if value.shape[1] != 2:
            raise ValueError("Surface points must be (row, col) pairs")
        return value

    def __len__(self) -> int:
        return int(self.points.shape[0])


class MetricsResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    dice: Fraction
    hd95: NonNegativeFloat
    nsd: Fraction
    tolerance: NonNegativeFloat = DEFAULT_NSD_TOLERANCE
    empty_prediction: bool = False
    empty_ground_truth: bool = False

    @property
    def degenerate(self) -> bool:
        return self.empty_prediction or self.empty_ground_truth

    @property
    def flags(self) -> str:
        names = [name for name, on in (("empty_prediction", self.empty_prediction),
                                       ("empty_ground_truth", self.empty_ground_truth)) if on]
        return "|".join(names) or "none"


class MetricsConvention(BaseModel):
    """
    Conventions that change reported surface metrics
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    tolerance: NonNegativeFloat = DEFAULT_NSD_TOLERANCE
    percentile: float = Field(default=95.0, ge=0, le=100)
    # Masks taller or wider than this use the distance transform instead of all-pairs distances
    exact_side: int = Field(default=64, ge=0)
