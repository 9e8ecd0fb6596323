from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from schemas.cognitive import CognitiveFrame

SCHEMA_VERSION = 1
DT = 0.04  # 25 Hz canonical grid
SCENARIO_IDS = (1, 2, 3, 4)

STATE_COLUMNS = ["x", "y", "v", "a", "steer_deg", "throttle", "brake", "heading_rad"]
PAD_COLUMNS = ["pad_p", "pad_a", "pad_d"]
CSV_COLUMNS = ["t", "vehicle_id"] + STATE_COLUMNS + PAD_COLUMNS

# Column positions inside a track matrix
X, Y, V, A, STEER, THROTTLE, BRAKE, HEADING = range(len(STATE_COLUMNS))


class VehicleState(BaseModel):
    """One vehicle at one instant, in the global frame (x along the road, y lateral)."""
    t: float
    vehicle_id: str
    x: float
    y: float
    v: float = Field(ge=0.0)
    a: float
    steer_deg: float
    throttle: float = Field(ge=0.0, le=1.0)
    brake: float = Field(ge=0.0, le=1.0)
    heading_rad: float

    def as_row(self) -> np.ndarray:
        return np.array([getattr(self, c) for c in STATE_COLUMNS], dtype=float)

    @classmethod
    def from_row(cls, t: float, vehicle_id: str, row) -> "VehicleState":
        return cls(t=float(t), vehicle_id=vehicle_id, **{c: float(row[i]) for i, c in enumerate(STATE_COLUMNS)})


class PadSample(BaseModel):
    pleased: float = Field(ge=-1.0, le=1.0)
    aroused: float = Field(ge=-1.0, le=1.0)
    dominant: float = Field(ge=-1.0, le=1.0)

    def as_vector(self) -> np.ndarray:
        return np.array([self.pleased, self.aroused, self.dominant], dtype=float)


class EpisodeSidecar(BaseModel):
    """JSON metadata written next to every episode CSV."""
    scenario_id: int
    ego_id: str
    npc_ids: List[str]
    sub_style_score: float
    seed: int
    schema_version: int = SCHEMA_VERSION
    meta: Dict[str, Any] = {}

    @field_validator("scenario_id")
    @classmethod
    def _known_scenario(cls, value: int) -> int:
        if value not in SCENARIO_IDS:
            raise ValueError(f"unknown scenario_id {value}")
        return value


class Episode(BaseModel):
    """
    Multi-vehicle kinematic record on a shared 25 Hz grid plus the ego driver's PAD annotation.

    tracks maps vehicle id -> (N, 8) matrix in STATE_COLUMNS order.
    Episodes are treated as immutable once built.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    episode_id: str
    scenario_id: int
    ego_id: str
    npc_ids: List[str]
    times: np.ndarray
    tracks: Dict[str, np.ndarray]
    ego_pad: np.ndarray
    sub_style_score: float
    seed: int
    meta: Dict[str, Any] = {}
    schema_version: int = SCHEMA_VERSION

    @model_validator(mode="after")
    def _consistent_shapes(self):
        if self.scenario_id not in SCENARIO_IDS:
            raise ValueError(f"unknown scenario_id {self.scenario_id}")
        n = len(self.times)
        expected = {self.ego_id, *self.npc_ids}
        if set(self.tracks) != expected:
            raise ValueError(f"tracks {sorted(self.tracks)} do not match vehicles {sorted(expected)}")
        for vid, track in self.tracks.items():
            if track.shape != (n, len(STATE_COLUMNS)):
                raise ValueError(f"track {vid} has shape {track.shape}, expected {(n, len(STATE_COLUMNS))}")
        if self.ego_pad.shape != (n, 3):
            raise ValueError(f"ego_pad has shape {self.ego_pad.shape}, expected {(n, 3)}")
        return self

    @property
    def n_steps(self) -> int:
        return len(self.times)

    @property
    def vehicle_ids(self) -> List[str]:
        """Deterministic vehicle ordering: sorted by id."""
        return sorted(self.tracks)

    @property
    def emotion_profile(self) -> Optional[str]:
        return self.meta.get("emotion_profile")

    def state(self, vehicle_id: str, step: int) -> VehicleState:
        return VehicleState.from_row(self.times[step], vehicle_id, self.tracks[vehicle_id][step])

    def states_at(self, step: int) -> List[VehicleState]:
        return [self.state(vid, step) for vid in self.vehicle_ids]

    def pad(self, step: int) -> PadSample:
        p, a, d = self.ego_pad[step]
        return PadSample(pleased=p, aroused=a, dominant=d)

    def positions(self, vehicle_id: str) -> np.ndarray:
        return self.tracks[vehicle_id][:, [X, Y]]

    def sidecar(self) -> EpisodeSidecar:
        return EpisodeSidecar(
            scenario_id=self.scenario_id,
            ego_id=self.ego_id,
            npc_ids=list(self.npc_ids),
            sub_style_score=self.sub_style_score,
            seed=self.seed,
            schema_version=self.schema_version,
            meta=dict(self.meta),
        )


class Sample(BaseModel):
    """
    One training/evaluation window.

    history holds (H, n_vehicles, 8) states with vehicles in `vehicle_ids` order;
    cognitive holds the ego CognitiveFrame for each history step when frames are available.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    episode_id: str
    scenario_id: int
    start_step: int
    vehicle_ids: List[str]
    ego_index: int
    history_times: np.ndarray
    history: np.ndarray
    cognitive: Optional[List[CognitiveFrame]] = None
    future_times: np.ndarray
    future_xy: np.ndarray

    @property
    def history_steps(self) -> int:
        return len(self.history_times)

    @property
    def future_steps(self) -> int:
        return len(self.future_times)

    @property
    def last_ego_xy(self) -> np.ndarray:
        return self.history[-1, self.ego_index, [X, Y]]

    @property
    def ego_history_xy(self) -> np.ndarray:
        return self.history[:, self.ego_index, :][:, [X, Y]]
