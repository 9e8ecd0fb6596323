from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from schemas.run_config import Variant

CONSISTENCY_TOLERANCE = 1e-12


class HorizonMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    horizon_s: float
    rmse_per_step: List[float]
    mae: float = Field(ge=0)
    ade: float = Field(ge=0)
    fde: float = Field(ge=0)
    pooled_rmse: float = Field(ge=0)

    @model_validator(mode="after")
    def _consistent(self):
        if not self.rmse_per_step:
            raise ValueError("rmse_per_step is empty")
        if any(v < 0 for v in self.rmse_per_step):
            raise ValueError("rmse_per_step values must be non-negative")
        mean = sum(self.rmse_per_step) / len(self.rmse_per_step)
        if abs(self.ade - mean) > CONSISTENCY_TOLERANCE:
            raise ValueError(f"ade {self.ade} differs from the mean step RMSE {mean}")
        if abs(self.fde - self.rmse_per_step[-1]) > CONSISTENCY_TOLERANCE:
            raise ValueError(f"fde {self.fde} differs from the last step RMSE {self.rmse_per_step[-1]}")
        return self


class MetricReport(BaseModel):
    """Displacement metrics of one variant on one scenario (None = all scenarios pooled)."""
    model_config = ConfigDict(frozen=True)

    variant: Variant
    scenario_id: Optional[int] = None
    n_samples: int = Field(ge=1)
    seed: Optional[int] = None
    horizons: List[HorizonMetrics]

    def at(self, horizon_s: float) -> HorizonMetrics:
        for h in self.horizons:
            if abs(h.horizon_s - horizon_s) < 1e-9:
                return h
        raise KeyError(f"no metrics for horizon {horizon_s} s")
