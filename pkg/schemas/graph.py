from enum import Enum
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

PHYSICAL_FEATURES = ["x", "y", "v", "a"]
ADJACENCY_TOLERANCE = 1e-12


class GraphKind(str, Enum):
    PHYSICAL = "physical"
    COGNITIVE = "cognitive"


class GraphSnapshot(BaseModel):
    """
    Node features plus weighted adjacency at one time step.

    adjacency[i][j] is the weight of the edge j -> i (row i receives from column j).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    node_features: np.ndarray
    adjacency: np.ndarray
    node_ids: List[str]
    kind: GraphKind

    @model_validator(mode="after")
    def _well_formed(self):
        n = len(self.node_ids)
        if self.adjacency.shape != (n, n):
            raise ValueError(f"adjacency shape {self.adjacency.shape} for {n} nodes")
        if self.node_features.ndim != 2 or self.node_features.shape[0] != n:
            raise ValueError(f"feature shape {self.node_features.shape} for {n} nodes")
        if np.any(self.adjacency < 0) or np.any(self.adjacency > 1.0 + ADJACENCY_TOLERANCE):
            raise ValueError("adjacency entries must lie in [0, 1]")
        if self.kind == GraphKind.PHYSICAL and not np.array_equal(self.adjacency, self.adjacency.T):
            raise ValueError("physical adjacency must be symmetric")
        return self


class FeatureNormalizer(BaseModel):
    """Per-column affine standardization fitted once on the training split."""
    model_config = ConfigDict(frozen=True)

    mean: List[float]
    scale: List[float]

    @model_validator(mode="after")
    def _positive_scale(self):
        if len(self.mean) != len(self.scale):
            raise ValueError("mean and scale lengths differ")
        if any(s <= 0 for s in self.scale):
            raise ValueError("scales must be positive")
        return self

    @classmethod
    def identity(cls, width: int = len(PHYSICAL_FEATURES)) -> "FeatureNormalizer":
        return cls(mean=[0.0] * width, scale=[1.0] * width)

    @classmethod
    def fit(cls, features) -> "FeatureNormalizer":
        values = np.asarray(features, dtype=float).reshape(-1, len(PHYSICAL_FEATURES))
        if len(values) == 0:
            return cls.identity()
        scale = values.std(axis=0)
        scale[scale == 0.0] = 1.0
        return cls(mean=values.mean(axis=0).tolist(), scale=scale.tolist())

    def transform(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=float) - np.asarray(self.mean)) / np.asarray(self.scale)
