from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from schemas.cognitive import EmoCluster

# Regime means of the PAD process; the neutral mean is a chosen value, the others are
# the reported exemplars for anger, slight fright, fright and slight anger.
PAD_ANGER = (-0.848, 0.462, 0.382)
PAD_SLIGHT_FRIGHT = (-0.257, -0.985, -0.322)
PAD_FRIGHT = (-0.168, -0.988, -0.301)
PAD_SLIGHT_ANGER = (-0.714, -0.273, 0.338)
PAD_NEUTRAL = (0.35, -0.05, 0.15)


class EmotionRegime(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: EmoCluster
    mean: Tuple[float, float, float]


# Pre-trigger regime -> post-trigger regime for each emotion profile
EMOTION_PROFILES: Dict[EmoCluster, Tuple[EmotionRegime, EmotionRegime]] = {
    EmoCluster.ANGER: (
        EmotionRegime(label=EmoCluster.ANGER, mean=PAD_ANGER),
        EmotionRegime(label=EmoCluster.FRIGHT, mean=PAD_SLIGHT_FRIGHT),
    ),
    EmoCluster.NEUTRAL: (
        EmotionRegime(label=EmoCluster.NEUTRAL, mean=PAD_NEUTRAL),
        EmotionRegime(label=EmoCluster.NEUTRAL, mean=PAD_NEUTRAL),
    ),
    EmoCluster.FRIGHT: (
        EmotionRegime(label=EmoCluster.FRIGHT, mean=PAD_FRIGHT),
        EmotionRegime(label=EmoCluster.ANGER, mean=PAD_SLIGHT_ANGER),
    ),
}


class EmotionSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    switch_delay: float = Field(default=1.5, ge=0)
    relax_time: float = Field(default=0.5, gt=0)
    noise: float = Field(default=0.05, ge=0)


class EmotionProcess(BaseModel):
    """
    PAD annotation process: a latent point relaxing toward the current regime mean,
    observed with isotropic noise and clamped to [-1, 1]^3.

    The regime switches from `before` to `after` switch_delay seconds after the trigger.
    """
    model_config = ConfigDict(frozen=True)

    before: EmotionRegime
    after: EmotionRegime
    settings: EmotionSettings = EmotionSettings()

    @classmethod
    def for_profile(cls, profile: EmoCluster, settings: EmotionSettings = EmotionSettings()) -> "EmotionProcess":
        before, after = EMOTION_PROFILES[profile]
        return cls(before=before, after=after, settings=settings)

    def regime(self, t: float, trigger_time: float) -> EmotionRegime:
        # a 1e-9 slack keeps grid times that print as the switch time on the new side
        return self.after if t >= trigger_time + self.settings.switch_delay - 1e-9 else self.before

    def sample(self, times: np.ndarray, trigger_time: float, rng: np.random.Generator) -> np.ndarray:
        latent = np.array(self.before.mean, dtype=float)
        out = np.zeros((len(times), 3))
        for k, t in enumerate(times):
            if k:
                dt = times[k] - times[k - 1]
                target = np.array(self.regime(t, trigger_time).mean)
                latent = latent + (1.0 - np.exp(-dt / self.settings.relax_time)) * (target - latent)
            out[k] = latent + self.settings.noise * rng.standard_normal(3)
        return np.clip(out, -1.0, 1.0)


class DriverGains(BaseModel):
    """Car-following, lane-keeping and emotion-modulation coefficients of the ego driver."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    desired_speed: float = 20.0
    speed_gain: float = 0.5
    gap_gain: float = 0.2
    closing_gain: float = 0.8
    headway: float = 1.5
    standstill_gap: float = 5.0
    max_accel: float = 3.0
    comfort_decel: float = 6.0
    full_brake_decel: float = 10.0
    lateral_gain: float = 0.05
    heading_gain: float = 0.5
    lateral_noise_deg: float = 1.0
    noise_correlation: float = Field(default=0.95, ge=0, lt=1)
    style_speed: float = 0.05
    style_headway: float = 0.1
    anger_speed: float = Field(default=1.3, ge=1)
    anger_gap: float = Field(default=0.7, gt=0, le=1)
    anger_lateral_noise: float = Field(default=2.0, ge=1)
    fright_brake: float = Field(default=1.5, ge=1)
    fright_steer_noise_deg: float = Field(default=1.5, ge=0)


class CrossingSettings(BaseModel):
    """Cyclist dart-out geometry: where the scene sits at the trigger and when the cyclist goes."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    # distance from the ego to the cyclist's start point when the trigger fires
    lead: float = Field(default=40.0, gt=0)
    # the cyclist starts at the first step after the trigger with the ego this close
    start_range: float = Field(default=40.0, gt=0)
    parked_offset: float = Field(default=6.0, gt=0)


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario_id: int
    emotion_profile: EmoCluster
    trigger_time: float = 4.0
    duration: float = 10.0
    seed: int = 0
    sub_style_score: Optional[float] = None
    driver_gains: DriverGains = DriverGains()
    emotion: EmotionSettings = EmotionSettings()
    crossing: CrossingSettings = CrossingSettings()

    @model_validator(mode="after")
    def _consistent(self):
        if self.scenario_id not in (1, 2, 3, 4):
            raise ValueError(f"unknown scenario_id {self.scenario_id}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not 0 <= self.trigger_time < self.duration:
            raise ValueError(f"trigger_time {self.trigger_time} must lie in [0, duration={self.duration})")
        return self

    @property
    def episode_id(self) -> str:
        return f"s{self.scenario_id}_{self.emotion_profile.value.lower()}_{self.seed:05d}"


class DriverContext(BaseModel):
    """What the ego driver perceives at one step."""
    model_config = ConfigDict(frozen=True)

    lead_gap: Optional[float] = None
    lead_speed: float = 0.0
    lateral_error: float = 0.0
    heading_error: float = 0.0
    curvature: float = 0.0
    speed_limit: Optional[float] = None
    sub_style_score: float = 3.0
    noise_state: float = 0.0


class DriverCommand(BaseModel):
    model_config = ConfigDict(frozen=True)

    throttle: float
    brake: float
    steer_deg: float
    accel: float
    noise_state: float = 0.0


class Manifest(BaseModel):
    schema_version: int = 1
    configs: List[ScenarioConfig] = []
