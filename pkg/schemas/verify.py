from pydantic import BaseModel, ConfigDict, Field

from schemas.utils import PositiveInt


class VerifyConfig(BaseModel):
    """
    Sizes of the identity checks. Instances draw K in 2..8, d in 1..5 and alternate linear and hidden models
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    instances: PositiveInt = 200
    observed_instances: PositiveInt = 20
    delta_configs: PositiveInt = 100
    fisher_inputs: PositiveInt = 200
    hidden_width: PositiveInt = 3
    tolerance: float = Field(default=1e-12, gt=0)
    psd_tolerance: float = Field(default=1e-8, gt=0)
    observed_tolerance: float = Field(default=1e-4, gt=0)
    strict_margin: float = Field(default=0.01, ge=0)
    # Smallest non-target probability that counts as active in the delta-strictness check
    active_threshold: float = Field(default=0.1, gt=0, lt=1)


class CheckResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    check: str
    instances: int
    max_error: float
    tolerance: float
    passed: bool
    detail: str = ""
