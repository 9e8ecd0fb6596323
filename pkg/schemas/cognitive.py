from enum import Enum
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, computed_field, model_validator

from schemas.dbn import Layer, NodeSpec


class RiskGrade(str, Enum):
    SAFE = "Safe"
    MODERATE = "Moderate"
    DANGER = "Danger"


class EmoCluster(str, Enum):
    ANGER = "Anger"
    NEUTRAL = "Neutral"
    FRIGHT = "Fright"


class SubStyle(str, Enum):
    AGGRESSIVE = "Aggressive"
    NEUTRAL = "Neutral"
    CONSERVATIVE = "Conservative"


class ObjStyle(str, Enum):
    GENTLE = "Gentle"
    MODERATE = "Moderate"
    HASTY = "Hasty"


class ManLongi(str, Enum):
    ACCELERATE = "Accelerate"
    MAINTAIN = "Maintain"
    DECELERATE = "Decelerate"


class ManLateral(str, Enum):
    LEFT_TURN = "LeftTurn"
    STRAIGHT = "Straight"
    RIGHT_TURN = "RightTurn"


def state_index(value: Enum) -> int:
    """Declaration order of an enum member; this is its DBN state index."""
    return list(type(value)).index(value)


def behavior_index(obj_style: ObjStyle, man_longi: ManLongi, man_lateral: ManLateral) -> int:
    return state_index(obj_style) * 9 + state_index(man_longi) * 3 + state_index(man_lateral)


def behavior_label(obj_style: ObjStyle, man_longi: ManLongi, man_lateral: ManLateral) -> str:
    return f"{obj_style.value}-{man_longi.value}-{man_lateral.value}"


BEHAVIOR_STATES = [
    behavior_label(o, m, l) for o in ObjStyle for m in ManLongi for l in ManLateral
]

# DBN column order; Maneuver is split into its longitudinal and lateral parts
COGNITIVE_NODES = [
    "Npc_a", "Risk_grade", "Emo_cluster", "Ego_a", "Sub_style",
    "Obj_style", "Man_longi", "Man_lateral", "Behavior",
]

NODE_LAYERS = {
    "Npc_a": Layer.STIMULUS,
    "Risk_grade": Layer.STIMULUS,
    "Emo_cluster": Layer.ORGANISM,
    "Ego_a": Layer.ORGANISM,
    "Sub_style": Layer.ORGANISM,
    "Obj_style": Layer.RESPONSE,
    "Man_longi": Layer.RESPONSE,
    "Man_lateral": Layer.RESPONSE,
    "Behavior": Layer.RESPONSE,
}

ENUM_NODES = {
    "Risk_grade": ("risk_grade", RiskGrade),
    "Emo_cluster": ("emo_cluster", EmoCluster),
    "Sub_style": ("sub_style", SubStyle),
    "Obj_style": ("obj_style", ObjStyle),
    "Man_longi": ("man_longi", ManLongi),
    "Man_lateral": ("man_lateral", ManLateral),
}
BIN_NODES = {"Npc_a": "npc_a_bin", "Ego_a": "ego_a_bin"}


class CognitiveFrame(BaseModel):
    """Discrete state of every cognitive node at one time step (ego driver)."""
    model_config = ConfigDict(frozen=True)

    risk_grade: RiskGrade
    npc_a_bin: int
    ego_a_bin: int
    emo_cluster: EmoCluster
    sub_style: SubStyle
    obj_style: ObjStyle
    man_longi: ManLongi
    man_lateral: ManLateral

    @computed_field
    @property
    def behavior(self) -> str:
        return behavior_label(self.obj_style, self.man_longi, self.man_lateral)


class AccelBinning(BaseModel):
    """Clips signed acceleration bins into a finite DBN state range [low, high]."""
    model_config = ConfigDict(frozen=True)

    low: int = -10
    high: int = 9

    @model_validator(mode="after")
    def _ordered(self):
        if self.high < self.low:
            raise ValueError("acceleration bin range is empty")
        return self

    @property
    def cardinality(self) -> int:
        return self.high - self.low + 1

    def to_state(self, bin_index: int) -> int:
        return int(min(max(bin_index, self.low), self.high)) - self.low

    def to_bin(self, state: int) -> int:
        return int(state) + self.low

    def state_names(self) -> List[str]:
        return [str(b) for b in range(self.low, self.high + 1)]


class CognitiveCodec(BaseModel):
    """Converts CognitiveFrames to DBN state rows and to the CSV export format."""
    model_config = ConfigDict(frozen=True)

    binning: AccelBinning = AccelBinning()
    include_behavior: bool = True

    @property
    def node_names(self) -> List[str]:
        return COGNITIVE_NODES if self.include_behavior else COGNITIVE_NODES[:-1]

    def node_specs(self) -> List[NodeSpec]:
        specs = []
        for name in self.node_names:
            if name in BIN_NODES:
                states = self.binning.state_names()
            elif name == "Behavior":
                states = BEHAVIOR_STATES
            else:
                states = [m.value for m in ENUM_NODES[name][1]]
            specs.append(NodeSpec(name=name, cardinality=len(states), layer=NODE_LAYERS[name], states=states))
        return specs

    def to_row(self, frame: CognitiveFrame) -> np.ndarray:
        row = []
        for name in self.node_names:
            if name in BIN_NODES:
                row.append(self.binning.to_state(getattr(frame, BIN_NODES[name])))
            elif name == "Behavior":
                row.append(behavior_index(frame.obj_style, frame.man_longi, frame.man_lateral))
            else:
                row.append(state_index(getattr(frame, ENUM_NODES[name][0])))
        return np.array(row, dtype=int)

    def to_array(self, frames: List[CognitiveFrame]) -> np.ndarray:
        if not frames:
            return np.zeros((0, len(self.node_names)), dtype=int)
        return np.stack([self.to_row(f) for f in frames])

    def from_row(self, row) -> CognitiveFrame:
        values: Dict[str, object] = {}
        for name, state in zip(self.node_names, row):
            if name in BIN_NODES:
                values[BIN_NODES[name]] = self.binning.to_bin(state)
            elif name in ENUM_NODES:
                field, enum = ENUM_NODES[name]
                values[field] = list(enum)[int(state)]
        return CognitiveFrame(**values)

    def to_dataframe(self, frames: List[CognitiveFrame]) -> pd.DataFrame:
        """One column per node, states as strings (raw signed bins for accelerations)."""
        records = []
        for f in frames:
            record = {}
            for name in self.node_names:
                if name in BIN_NODES:
                    record[name] = str(getattr(f, BIN_NODES[name]))
                elif name == "Behavior":
                    record[name] = f.behavior
                else:
                    record[name] = getattr(f, ENUM_NODES[name][0]).value
            records.append(record)
        return pd.DataFrame.from_records(records, columns=self.node_names)

    def from_dataframe(self, df: pd.DataFrame) -> List[CognitiveFrame]:
        frames = []
        for record in df.to_dict(orient="records"):
            values = {BIN_NODES[n]: int(record[n]) for n in BIN_NODES}
            for name, (field, enum) in ENUM_NODES.items():
                values[field] = enum(record[name])
            frames.append(CognitiveFrame(**values))
        return frames


class ClusterModel(BaseModel):
    """
    Fitted k-means model.

    Points are standardized with (feature_mean, feature_scale) before distances are taken;
    centroids live in the standardized space, raw_centroids in input units.
    """
    model_config = ConfigDict(frozen=True)

    k: int
    centroids: List[List[float]]
    raw_centroids: Optional[List[List[float]]] = None
    label_map: Dict[int, str]
    feature_mean: Optional[List[float]] = None
    feature_scale: Optional[List[float]] = None
    inertia_history: List[float] = []
    iterations: int = 0

    @model_validator(mode="after")
    def _well_formed(self):
        if len(self.centroids) != self.k:
            raise ValueError(f"{len(self.centroids)} centroids for k={self.k}")
        if not np.all(np.isfinite(np.asarray(self.centroids, dtype=float))):
            raise ValueError("centroids must be finite")
        if sorted(self.label_map) != list(range(self.k)) or len(set(self.label_map.values())) != self.k:
            raise ValueError("label_map must be a bijection from cluster indices to labels")
        return self

    def standardize(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.feature_mean is None:
            return pts
        return (pts - np.asarray(self.feature_mean)) / np.asarray(self.feature_scale)

    def assign(self, points) -> np.ndarray:
        """Nearest centroid per point; ties go to the lowest cluster index."""
        pts = self.standardize(points)
        centroids = np.asarray(self.centroids, dtype=float)
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)

    def labels(self, points) -> List[str]:
        return [self.label_map[int(i)] for i in self.assign(points)]

    def relabel(self, label_map: Dict[int, str]) -> "ClusterModel":
        return self.model_copy(update={"label_map": dict(label_map)})
