from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from schemas.utils import FloatVector, FloatMatrix, IntVector, PositiveInt

SIMPLEX_TOLERANCE = 1e-12


class Architecture(Enum):
    linear = "linear"
    hidden = "hidden"


class ClassProbabilities(BaseModel):
    """
    A point on the probability simplex. Class indices are 0-based
    """
    model_config = ConfigDict(frozen=True)

    probs: FloatVector

    @field_validator("probs")
    @classmethod
    def _on_simplex(cls, value: np.ndarray) -> np.ndarray:
        if value.size < 2:
            raise ValueError("At least two classes are required")
        if np.min(value) < 0:
            raise ValueError("Probabilities must be non-negative")
        if abs(float(np.sum(value)) - 1.0) > SIMPLEX_TOLERANCE:
            raise ValueError("Probabilities must sum to one")
        return value

    @property
    def class_count(self) -> int:
        return int(self.probs.size)

    def target(self, c: int) -> float:
        """
        Target-class posterior q = eta_c
        """
        return float(self.probs[c])

    def non_target(self, c: int) -> np.ndarray:
        """
        Renormalized non-target distribution pi, with pi_c = 0

        :param c: Target class
        :return: pi as an array
        """
        rest = 1.0 - self.probs[c]
        if rest <= 0:
            raise ValueError("Non-target distribution is undefined when eta_c = 1")
        pi = self.probs / rest
        pi[c] = 0.0
        return pi


class SoftmaxModel(BaseModel):
    """
    Parametric logit map f(x; theta). Linear models have logits W x + b, hidden models tanh(A x + a) followed by
    B h + b. With ``reduced`` the last class logit is pinned to 0 and carries no parameters.

    Parameter layout (linear): class-major blocks [w_k (d), b_k] for each parameterized class k.
    Parameter layout (hidden): [A (h*d, row-major), a (h), B (k*h, row-major), b (k)].
    """
    model_config = ConfigDict(frozen=True)

    feature_dim: PositiveInt
    class_count: int = Field(ge=2)
    architecture: Architecture = Architecture.linear
    hidden_width: PositiveInt = 8
    reduced: bool = False

    @property
    def output_rows(self) -> int:
        return self.class_count - 1 if self.reduced else self.class_count

    @property
    def param_count(self) -> int:
        d, k = self.feature_dim, self.output_rows
        if self.architecture is Architecture.linear:
            return k * (d + 1)
        h = self.hidden_width
        return h * d + h + k * h + k


class CoarseningMap(BaseModel):
    """
    Deterministic label coarsening. Without ``mapping`` it is the target-vs-rest map z = 1{y = c}; with ``mapping``
    it is the general map g, where ``mapping[y]`` is the coarse label of class y (0-based, surjective onto 0..M-1)
    """
    model_config = ConfigDict(frozen=True)

    target_class: int = Field(default=1, ge=0)
    mapping: Optional[tuple[int, ...]] = None

    @field_validator("mapping")
    @classmethod
    def _surjective(cls, value):
        if value is None:
            return value
        if len(value) < 1 or min(value) < 0:
            raise ValueError("Coarse labels must be non-negative")
        if set(value) != set(range(max(value) + 1)):
            raise ValueError("Coarsening map must be surjective onto 0..M-1")
        return value

    @property
    def canonical(self) -> bool:
        return self.mapping is None

    def coarse_count(self, class_count: int) -> int:
        return 2 if self.canonical else max(self.mapping) + 1

    def indicator(self, class_count: int) -> np.ndarray:
        """
        Matrix A with A[z, y] = 1 iff g(y) = z, so that p(z | x) = A @ eta

        :param class_count: Number of fine classes K
        :return: (M, K) 0/1 matrix
        """
        if self.canonical:
            if self.target_class >= class_count:
                raise ValueError(f"Target class {self.target_class} out of range for {class_count} classes")
            a = np.zeros((2, class_count))
            a[1, self.target_class] = 1.0
            a[0] = 1.0 - a[1]
            return a

        if len(self.mapping) != class_count:
            raise ValueError(f"Coarsening map covers {len(self.mapping)} classes, model has {class_count}")
        a = np.zeros((self.coarse_count(class_count), class_count))
        a[list(self.mapping), np.arange(class_count)] = 1.0
        return a


class Dataset(BaseModel):
    """
    Inputs and 0-based class labels
    """
    model_config = ConfigDict(frozen=True)

    inputs: FloatMatrix
    labels: IntVector

    @model_validator(mode="after")
    def _consistent(self):
        if self.labels.size < 1:
            raise ValueError("Dataset must contain at least one sample")
        if self.inputs.shape[0] != self.labels.size:
            raise ValueError("Inputs and labels must have the same number of rows")
        if np.min(self.labels) < 0:
            raise ValueError("Labels must be non-negative")
        return self

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels)


LogitVector = FloatVector
ParameterVector = FloatVector
