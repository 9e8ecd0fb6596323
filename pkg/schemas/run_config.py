from enum import Enum
from typing import List

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from schemas.cognitive import AccelBinning, CognitiveCodec, EmoCluster
from schemas.dbn import Penalty, Prior

SCHEMA_VERSION = 1


class Variant(str, Enum):
    P = "p"
    CP = "cp"
    CPSOR = "cpsor"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GenerateConfig(StrictModel):
    episodes: int = Field(default=20, ge=0)
    scenarios: List[int] = [1, 2, 3, 4]
    emotions: List[EmoCluster] = [EmoCluster.ANGER, EmoCluster.NEUTRAL, EmoCluster.FRIGHT]
    seed: int = 0
    duration: float = 10.0
    trigger_time: float = 4.0

    @field_validator("scenarios")
    @classmethod
    def _known(cls, value: List[int]) -> List[int]:
        bad = [s for s in value if s not in (1, 2, 3, 4)]
        if bad:
            raise ValueError(f"unknown scenario ids {bad}")
        return value


class DiscretizerConfig(StrictModel):
    accel_bin_width: float = Field(default=0.2, gt=0)
    accel_bin_low: int = -10
    accel_bin_high: int = 9
    window_steps: int = Field(default=20, ge=1)
    ac_threshold: float = 0.2
    include_behavior: bool = True
    kmeans_max_iter: int = Field(default=100, ge=1)
    seed: int = 0

    def codec(self) -> CognitiveCodec:
        return CognitiveCodec(
            binning=AccelBinning(low=self.accel_bin_low, high=self.accel_bin_high),
            include_behavior=self.include_behavior,
        )


class DbnSearchConfig(StrictModel):
    prior: Prior = Prior.SOR
    penalty: Penalty = Penalty.PARAMS
    restarts: int = Field(default=8, ge=1)
    seed: int = 0
    alpha: float = Field(default=0.0, ge=0)
    search_inter: bool = True
    start_edge_probability: float = Field(default=0.2, ge=0, le=1)
    max_iterations: int = Field(default=500, ge=1)
    max_parents: int = Field(default=4, ge=0)
    per_scenario: bool = False


class GraphConfig(StrictModel):
    d_close: float = Field(default=50.0, gt=0)


class TrainConfig(StrictModel):
    variant: Variant = Variant.CPSOR
    t_p: float = Field(default=3.0, gt=0)
    t_f: float = Field(default=1.0, gt=0)
    stride: int = Field(default=5, ge=1)
    epochs: int = Field(default=20, ge=0)
    batch_size: int = Field(default=32, ge=1)
    step_size: float = Field(default=1e-3, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    clip_norm: float = Field(default=10.0, gt=0)
    seed: int = 0
    gcn_width: int = Field(default=16, ge=1)
    lstm_width: int = Field(default=32, ge=1)
    attention_width: int = Field(default=16, ge=1)
    offset_scale: float = Field(default=10.0, gt=0)


class AblationConfig(StrictModel):
    horizons: List[float] = [1.0, 2.0, 3.0]
    seeds: List[int] = [0, 1, 2, 3, 4]
    split: List[float] = [0.7, 0.15, 0.15]

    @field_validator("split")
    @classmethod
    def _ratios(cls, value: List[float]) -> List[float]:
        if len(value) != 3 or abs(sum(value) - 1.0) > 1e-9 or min(value) < 0:
            raise ValueError("split must be three non-negative ratios summing to 1")
        return value


class PlotConfig(StrictModel):
    format: str = "svg"
    width_in: float = 8.0
    height_in: float = 5.0

    @field_validator("format")
    @classmethod
    def _known_format(cls, value: str) -> str:
        if value not in ("svg", "csv"):
            raise ValueError(f"unknown plot format {value}")
        return value


class RunConfig(StrictModel):
    """Every tunable of the pipeline; each field has a default, unknown keys are rejected."""
    schema_version: int = SCHEMA_VERSION
    generate: GenerateConfig = GenerateConfig()
    discretize: DiscretizerConfig = DiscretizerConfig()
    dbn: DbnSearchConfig = DbnSearchConfig()
    graph: GraphConfig = GraphConfig()
    train: TrainConfig = TrainConfig()
    ablation: AblationConfig = AblationConfig()
    plot: PlotConfig = PlotConfig()

    @model_validator(mode="after")
    def _version(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {self.schema_version}")
        return self
