from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from schemas.utils import FloatMatrix, FloatVector

SYMMETRY_TOLERANCE = 1e-10
PSD_TOLERANCE = 1e-8

ScoreVector = FloatVector


class InfoKind(Enum):
    multiclass = "multiclass"
    binary = "binary"
    gap = "gap"
    missing = "missing"
    observed = "observed"
    generic = "generic"


# Kinds that are expectations of outer products or conditional variances, hence PSD
PSD_KINDS = {InfoKind.multiclass, InfoKind.binary, InfoKind.gap, InfoKind.missing}


class InfoMatrix(BaseModel):
    """
    Symmetric p x p information matrix. Fisher-type kinds are checked to be PSD up to tolerance; the observed
    information and generic matrices only need to be symmetric
    """
    model_config = ConfigDict(frozen=True)

    entries: FloatMatrix
    kind: InfoKind = InfoKind.generic

    @model_validator(mode="after")
    def _symmetric_psd(self):
        a = self.entries
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"Information matrix must be square, got {a.shape}")
        scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
        if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOLERANCE * scale:
            raise ValueError("Information matrix is not symmetric")
        if self.kind in PSD_KINDS and a.size and self.min_eigenvalue < -PSD_TOLERANCE * scale:
            raise ValueError(f"{self.kind.value} information matrix is not positive semidefinite")
        return self

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])

    @property
    def symmetrized(self) -> np.ndarray:
        return (self.entries + self.entries.T) / 2

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.symmetrized)

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])


class LoewnerVerdict(BaseModel):
    holds: bool
    min_eig: float
