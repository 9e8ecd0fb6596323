from typing import Dict, List

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from schemas.cognitive import ClusterModel, CognitiveFrame, SubStyle

SCHEMA_VERSION = 1


class WindowSelection(BaseModel):
    """Outcome of the autocorrelation window search on one channel."""
    model_config = ConfigDict(frozen=True)

    steps: int
    lag1: float = float("nan")
    degenerate: bool = False


class SubStyleThresholds(BaseModel):
    """Tertile cut points of the driving-style score population."""
    model_config = ConfigDict(frozen=True)

    lower: float
    upper: float
    minimum: float
    maximum: float

    @model_validator(mode="after")
    def _ordered(self):
        if not self.minimum <= self.lower <= self.upper <= self.maximum:
            raise ValueError("sub-style thresholds must satisfy minimum <= lower <= upper <= maximum")
        return self

    @classmethod
    def from_population(cls, population) -> "SubStyleThresholds":
        scores = np.asarray(population, dtype=float)
        if scores.size == 0:
            raise ValueError("sub-style population is empty")
        lower, upper = np.quantile(scores, [1.0 / 3.0, 2.0 / 3.0])
        return cls(lower=float(lower), upper=float(upper), minimum=float(scores.min()), maximum=float(scores.max()))

    def classify(self, score: float) -> SubStyle:
        """
        Above the upper tertile is Aggressive, below the lower is Conservative, else Neutral.

        The population extremes always land in the outer classes unless every score is equal.
        """
        if self.maximum > self.minimum:
            if score >= self.maximum:
                return SubStyle.AGGRESSIVE
            if score <= self.minimum:
                return SubStyle.CONSERVATIVE
        if score > self.upper:
            return SubStyle.AGGRESSIVE
        if score < self.lower:
            return SubStyle.CONSERVATIVE
        return SubStyle.NEUTRAL


class DiscretizerArtifacts(BaseModel):
    """Everything fitted on the pooled dataset that `apply` needs to label a new episode."""
    model_config = ConfigDict(frozen=True)

    schema_version: int = SCHEMA_VERSION
    emotion: ClusterModel
    maneuver: ClusterModel
    sub_style: SubStyleThresholds
    window_steps: int
    accel_bin_width: float


class DiscretizationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    artifacts: DiscretizerArtifacts
    frames: Dict[str, List[CognitiveFrame]]
    windows: Dict[str, Dict[str, WindowSelection]] = {}
