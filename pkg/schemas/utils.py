from typing import Any, Annotated

import numpy as np
from pydantic import Field
from pydantic_core import core_schema

PositiveInt = Annotated[int, Field(ge=1)]
NonNegativeInt = Annotated[int, Field(ge=0)]
PositiveFloat = Annotated[float, Field(gt=0)]
NonNegativeFloat = Annotated[float, Field(ge=0)]
Fraction = Annotated[float, Field(ge=0, le=1)]


class NDArray:
    """
    Pydantic adapter for numpy array fields. Accepts anything ``np.asarray`` understands, checks dtype kind,
    dimensionality and finiteness, and serializes back to nested lists
    """

    def __init__(self, dtype: Any = float, ndim: int | None = None, finite: bool = True):
        self.dtype = np.dtype(dtype)
        self.ndim = ndim
        self.finite = finite

    def __get_pydantic_core_schema__(self, _source_type: Any, _handler: Any) -> core_schema.CoreSchema:
        return core_schema.no_info_plain_validator_function(
            self.validate,
            serialization=core_schema.plain_serializer_function_ser_schema(lambda x: np.asarray(x).tolist()),
        )

    def validate(self, value) -> np.ndarray:
        try:
            array = np.array(value, dtype=self.dtype)
        except (TypeError, ValueError):
            raise ValueError(f"Cannot convert value to a {self.dtype} array")

        if self.ndim is not None and array.ndim != self.ndim:
            raise ValueError(f"Expected a {self.ndim}-dimensional array, got {array.ndim} dimensions")
        if self.finite and array.dtype.kind == "f" and not np.all(np.isfinite(array)):
            raise ValueError("Array contains non-finite entries")

        array.setflags(write=False)
        return array


FloatVector = Annotated[np.ndarray, NDArray(float, ndim=1)]
FloatMatrix = Annotated[np.ndarray, NDArray(float, ndim=2)]
FloatGrid = Annotated[np.ndarray, NDArray(float, ndim=2)]
IntVector = Annotated[np.ndarray, NDArray(np.int64, ndim=1)]
IntGrid = Annotated[np.ndarray, NDArray(np.int64, ndim=2)]
BoolGrid = Annotated[np.ndarray, NDArray(bool, ndim=2)]
