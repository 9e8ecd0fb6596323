from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from schemas.graph import FeatureNormalizer, PHYSICAL_FEATURES
from schemas.run_config import Variant

SCHEMA_VERSION = 1

# DBN each variant reads its cognitive graph weights from
VARIANT_DBN = {Variant.P: None, Variant.CP: "ordinary", Variant.CPSOR: "sor"}


class PredictorDims(BaseModel):
    model_config = ConfigDict(frozen=True)

    phys_in: int = len(PHYSICAL_FEATURES)
    cog_in: int = Field(default=27, ge=1)
    gcn_width: int = Field(default=16, ge=1)
    lstm_width: int = Field(default=32, ge=1)
    attention_width: int = Field(default=16, ge=1)
    future_steps: int = Field(default=25, ge=1)

    @property
    def embedding_width(self) -> int:
        return 2 * self.gcn_width

    def layout(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """Name and shape of every parameter block, in flat-vector order."""
        g, h, a = self.gcn_width, self.lstm_width, self.attention_width
        return [
            ("phy_w1", (self.phys_in, g)),
            ("phy_w2", (g, g)),
            ("cog_w1", (self.cog_in, g)),
            ("cog_w2", (g, g)),
            ("lstm_w", (4 * h, self.embedding_width + h)),
            ("lstm_b", (4 * h,)),
            ("att_p", (a, h)),
            ("att_u", (a,)),
            ("head_w", (2 * self.future_steps, h)),
            ("head_b", (2 * self.future_steps,)),
        ]

    def size(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.layout()))


class PredictorParams(BaseModel):
    """All weights as one flat float64 vector; `views` exposes shaped blocks sharing its memory."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dims: PredictorDims
    vector: np.ndarray

    @model_validator(mode="after")
    def _sized(self):
        if self.vector.ndim != 1 or len(self.vector) != self.dims.size():
            raise ValueError(f"parameter vector of length {self.vector.shape} for layout of size {self.dims.size()}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("parameters must be finite")
        return self

    def views(self) -> Dict[str, np.ndarray]:
        return unflatten(self.dims, self.vector)

    def with_vector(self, vector: np.ndarray) -> "PredictorParams":
        return PredictorParams(dims=self.dims, vector=np.array(vector, dtype=float))


def unflatten(dims: PredictorDims, vector: np.ndarray) -> Dict[str, np.ndarray]:
    blocks, offset = {}, 0
    for name, shape in dims.layout():
        size = int(np.prod(shape))
        blocks[name] = vector[offset:offset + size].reshape(shape)
        offset += size
    return blocks


def flatten(dims: PredictorDims, blocks: Dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(blocks[name], dtype=float).ravel() for name, _ in dims.layout()])


class PreparedSample(BaseModel):
    """
    Graph tensors of one Sample, ready for the predictor.

    Adjacencies are already normalized with self-loops. dbn records which DBN built the
    cognitive graphs (None when they are absent).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    key: str
    scenario_id: int
    phys_features: np.ndarray
    phys_adjacency: np.ndarray
    ego_index: int
    cog_features: Optional[np.ndarray] = None
    cog_adjacency: Optional[np.ndarray] = None
    dbn: Optional[str] = None
    origin: np.ndarray
    history_xy: np.ndarray
    future_xy: np.ndarray


class ForwardTrace(BaseModel):
    """Intermediate activations kept for the backward pass; attention is (batch, T_p)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    attention: np.ndarray
    cache: Dict[str, object]


class WeightsDocument(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    schema_version: int = SCHEMA_VERSION
    variant: Variant
    history_steps: int
    future_steps: int
    offset_scale: float
    d_close: float
    normalizer: FeatureNormalizer
    params: PredictorParams
