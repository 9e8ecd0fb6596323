"""
Deterministic synthetic pre-crash scenarios: lead-vehicle braking, Bezier cut-in,
cyclist dart-out behind a parked car, and an unprotected left turn.

Road frame: ego lane centred on y = 0, the adjacent (left / oncoming) lane on y = 3.5,
heading counter-clockwise positive.
"""
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from schemas.cognitive import CognitiveCodec, CognitiveFrame, EmoCluster, state_index
from schemas.dbn import DbnModel
from schemas.run_config import GenerateConfig
from schemas.scenario import DriverContext, EmotionProcess, Manifest, ScenarioConfig
from schemas.trajectory import A, DT, STATE_COLUMNS, Episode, VehicleState
from services.dataset_service import DatasetService
from services.dbn_service import DbnService
from services.discretizer_service import DiscretizerService, bin_acceleration
from services.driver_model_service import STEERING_RATIO, WHEELBASE, advance, driver_step
from utils.errors import ScenarioConfigError
from utils.logger_factory import new_logger
from utils.number_format import EPISODE_DIGITS, quantize

log = new_logger("scenario_service")

LANE_WIDTH = 3.5
CAR_LENGTH = 4.5
EGO_ID = "ego"
LEAD_RANGE = 150.0

# Scenario 1
LEAD_BRAKE_DECEL = 6.0
# Scenario 2
CUT_IN_SPEED = 17.0
CUT_IN_START_GAP = 40.0
CUT_IN_DURATION = 3.0
# Scenario 3
PARKED_LATERAL = -3.0
CYCLIST_LATERAL = -5.0
CYCLIST_SPEED = 4.0
CYCLIST_ACCEL = 4.0
# Scenario 4
TURN_START_X = 90.0
TURN_RADIUS = 12.0
TURN_SPEED = 10.0
ONCOMING_START_X = 180.0
ONCOMING_SPEED = 10.0
ONCOMING_FINAL_SPEED = 16.0
ONCOMING_ACCEL = 2.0
GAP_ACCEPTANCE = 3.0
TURN_EGO_START_X = 20.0
STOP_MARGIN = 6.0

EMOTION_ORDER = [EmoCluster.ANGER, EmoCluster.NEUTRAL, EmoCluster.FRIGHT]


def bezier3(p0, p1, p2, p3, u: float) -> np.ndarray:
    """Cubic Bezier point at u in [0, 1]."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"bezier parameter must lie in [0, 1], got {u}")
    p0, p1, p2, p3 = (np.asarray(p, dtype=float) for p in (p0, p1, p2, p3))
    w = 1.0 - u
    return w ** 3 * p0 + 3 * w ** 2 * u * p1 + 3 * w * u ** 2 * p2 + u ** 3 * p3


def _wrap(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


def _ramp(times: np.ndarray, start: float, v0: float, v1: float, accel: float) -> Tuple[np.ndarray, np.ndarray]:
    """Speed changing from v0 toward v1 at |accel| from `start`; returns (distance travelled, speed)."""
    rate = abs(accel)
    tau_end = abs(v1 - v0) / rate if rate else 0.0
    sign = 1.0 if v1 >= v0 else -1.0
    tau = np.clip(times - start, 0.0, tau_end)
    moving = np.clip(times - start, 0.0, None)
    speed = v0 + sign * rate * tau
    distance = v0 * np.minimum(times, start) + v0 * tau + 0.5 * sign * rate * tau ** 2 + v1 * (moving - tau)
    return distance, speed


def _track(times: np.ndarray, x: np.ndarray, y: np.ndarray, v: np.ndarray, heading: np.ndarray) -> np.ndarray:
    """Scripted road-user track with acceleration, steering and pedals derived from the path."""
    accel = np.append(np.diff(v) / DT, 0.0)
    yaw_rate = np.append(np.diff(np.unwrap(heading)) / DT, 0.0)
    wheel = np.where(v > 0.1, np.arctan(WHEELBASE * yaw_rate / np.maximum(v, 0.1)), 0.0)
    steer = -STEERING_RATIO * np.degrees(wheel)
    throttle = np.clip(accel / 3.0, 0.0, 1.0)
    brake = np.clip(-accel / 10.0, 0.0, 1.0)
    return np.column_stack([x, y, v, accel, steer, throttle, brake, heading])


class TurnPath:
    """Straight approach along y = 0, a quarter arc to the left, then straight north."""

    def __init__(self, start_x: float = TURN_START_X, radius: float = TURN_RADIUS):
        self.start_x = start_x
        self.radius = radius
        self.center = (start_x, radius)
        conflict_angle = math.asin((LANE_WIDTH - radius) / radius)
        self.conflict_s = start_x + radius * (conflict_angle + math.pi / 2)
        self.conflict_x = start_x + radius * math.cos(conflict_angle)

    def frame(self, x: float, y: float) -> Tuple[float, float, float, float]:
        """(arc length, lateral error left-positive, path heading, curvature) at the closest path point."""
        cx, cy = self.center
        if x < self.start_x:
            return x, y, 0.0, 0.0
        if y < cy:
            phi = math.atan2(y - cy, x - cx)
            r = math.hypot(x - cx, y - cy)
            return self.start_x + self.radius * (phi + math.pi / 2), self.radius - r, phi + math.pi / 2, 1.0 / self.radius
        s = self.start_x + self.radius * math.pi / 2 + (y - cy)
        return s, (cx + self.radius) - x, math.pi / 2, 0.0


class CyclistCrossing:
    """
    Scenario 3 road users, placed during the rollout.

    The scene is anchored `crossing.lead` metres ahead of the ego at the trigger step; until
    then both rows sit at x = inf, outside every perception range. The cyclist starts its
    crossing at the first step at or after the trigger with the ego within
    `crossing.start_range` of its start point.
    """

    def __init__(self, config: ScenarioConfig, times: np.ndarray):
        self.settings = config.crossing
        self.trigger = config.trigger_time
        self.times = times
        n = len(times)
        self.cyclist = np.zeros((n, len(STATE_COLUMNS)))
        self.cyclist[:, 0] = np.inf
        self.cyclist[:, 1] = CYCLIST_LATERAL
        self.cyclist[:, 7] = math.pi / 2
        self.parked = np.zeros((n, len(STATE_COLUMNS)))
        self.parked[:, 0] = np.inf
        self.parked[:, 1] = PARKED_LATERAL
        self.anchor_x: Optional[float] = None
        self.start_time: Optional[float] = None

    def rows(self) -> Dict[str, np.ndarray]:
        return {"cyclist": self.cyclist, "parked": self.parked}

    def update(self, step: int, ego: VehicleState) -> None:
        """Fill the rows of `step` from the ego state the driver is about to react to."""
        t = self.times[step]
        if t < self.trigger - 1e-9:
            return
        if self.anchor_x is None:
            self.anchor_x = ego.x + self.settings.lead
            self.cyclist[:, 0] = self.anchor_x
            self.parked[:, 0] = self.anchor_x - self.settings.parked_offset
        if self.start_time is None and 0.0 < self.anchor_x - ego.x <= self.settings.start_range + 1e-9:
            self.start_time = t
            log.debug(f"Cyclist starts at t={t:.2f}s, {self.anchor_x - ego.x:.1f}m ahead of the ego")
        if self.start_time is not None:
            distance, speed = _ramp(np.array([t]), self.start_time, 0.0, CYCLIST_SPEED, CYCLIST_ACCEL)
            self.cyclist[step, 1] = CYCLIST_LATERAL + distance[0]
            self.cyclist[step, 2] = speed[0]

    def tracks(self) -> Dict[str, np.ndarray]:
        """Final tracks with acceleration, steering and pedals derived from the filled path."""
        if self.anchor_x is None:
            raise ScenarioConfigError("the rollout ended before the trigger")
        c, p = self.cyclist, self.parked
        return {
            "cyclist": _track(self.times, c[:, 0], c[:, 1], c[:, 2], c[:, 7]),
            "parked": _track(self.times, p[:, 0], p[:, 1], p[:, 2], p[:, 7]),
        }


class ScenarioService:
    """Scripted NPCs, the ego driver loop, PAD annotation and dataset generation."""

    @staticmethod
    def npc_tracks(config: ScenarioConfig, times: np.ndarray, ego_speed: float) -> Dict[str, np.ndarray]:
        """Scripted tracks of scenarios 1, 2 and 4; scenario 3 is placed during the rollout."""
        trigger = config.trigger_time
        n = len(times)
        zeros, ones = np.zeros(n), np.ones(n)
        if config.scenario_id == 1:
            gains = config.driver_gains
            start = CAR_LENGTH + gains.standstill_gap + gains.headway * ego_speed
            distance, speed = _ramp(times, trigger, ego_speed, 0.0, LEAD_BRAKE_DECEL)
            return {"npc1": _track(times, start + distance, zeros, speed, zeros)}

        if config.scenario_id == 2:
            x0 = CUT_IN_START_GAP + CUT_IN_SPEED * trigger
            length = CUT_IN_SPEED * CUT_IN_DURATION
            p = [(x0, LANE_WIDTH), (x0 + length / 3, LANE_WIDTH), (x0 + 2 * length / 3, 0.0), (x0 + length, 0.0)]
            xy = np.zeros((n, 2))
            for k, t in enumerate(times):
                if t < trigger:
                    xy[k] = (CUT_IN_START_GAP + CUT_IN_SPEED * t, LANE_WIDTH)
                elif t <= trigger + CUT_IN_DURATION:
                    xy[k] = bezier3(*p, min(1.0, (t - trigger) / CUT_IN_DURATION))
                else:
                    xy[k] = (x0 + length + CUT_IN_SPEED * (t - trigger - CUT_IN_DURATION), 0.0)
            vel = np.gradient(xy, DT, axis=0)
            vel[times < trigger] = (CUT_IN_SPEED, 0.0)
            vel[times > trigger + CUT_IN_DURATION] = (CUT_IN_SPEED, 0.0)
            heading = np.arctan2(vel[:, 1], vel[:, 0])
            return {"npc1": _track(times, xy[:, 0], xy[:, 1], np.hypot(vel[:, 0], vel[:, 1]), heading)}

        distance, speed = _ramp(times, trigger, ONCOMING_SPEED, ONCOMING_FINAL_SPEED, ONCOMING_ACCEL)
        return {"npc1": _track(times, ONCOMING_START_X - distance, LANE_WIDTH * ones, speed, math.pi * ones)}

    @staticmethod
    def npc_order(scenario_id: int) -> List[str]:
        return ["cyclist", "parked"] if scenario_id == 3 else ["npc1"]

    @staticmethod
    def perceive(
        config: ScenarioConfig,
        ego: VehicleState,
        npcs: Dict[str, np.ndarray],
        step: int,
        path: Optional[TurnPath],
        style: float,
        noise_state: float,
    ) -> DriverContext:
        """Path errors and the nearest relevant obstacle ahead of the ego."""
        if path is not None:
            s_ego, lateral, path_heading, curvature = path.frame(ego.x, ego.y)
        else:
            s_ego, lateral, path_heading, curvature = ego.x, ego.y, 0.0, 0.0

        lead_gap, lead_speed, limit = None, 0.0, None
        sid = config.scenario_id
        if sid in (1, 2, 3):
            corridor = {1: LANE_WIDTH, 2: 0.75 * LANE_WIDTH, 3: 2.0}[sid]
            for vid in ScenarioService.npc_order(sid):
                row = npcs[vid][step]
                ahead = row[0] - ego.x
                if ahead <= 0 or ahead > LEAD_RANGE or abs(row[1] - ego.y) >= corridor:
                    continue
                gap = ahead - CAR_LENGTH
                if lead_gap is None or gap < lead_gap:
                    lead_gap, lead_speed = gap, row[2] * math.cos(row[7] - ego.heading_rad)
        else:
            limit = TURN_SPEED
            row = npcs["npc1"][step]
            approaching = row[0] > path.conflict_x - CAR_LENGTH
            time_to_conflict = (row[0] - path.conflict_x) / max(row[2], 0.1)
            if s_ego < path.conflict_s - STOP_MARGIN and approaching and time_to_conflict < GAP_ACCEPTANCE:
                lead_gap, lead_speed = path.conflict_s - STOP_MARGIN - s_ego, 0.0

        return DriverContext(
            lead_gap=lead_gap,
            lead_speed=lead_speed,
            lateral_error=lateral,
            heading_error=_wrap(ego.heading_rad - path_heading),
            curvature=curvature,
            speed_limit=limit,
            sub_style_score=style,
            noise_state=noise_state,
        )

    @staticmethod
    def generate_episode(config: ScenarioConfig) -> Episode:
        """
        Roll out one scenario at 25 Hz; a pure function of the config.

        All numeric output is rounded to 9 significant digits so a write/read round trip
        reproduces it exactly.
        """
        n = int(round(config.duration / DT))
        if n < 2:
            raise ScenarioConfigError(f"duration {config.duration} s is shorter than two steps")
        times = quantize(np.arange(n) * DT, EPISODE_DIGITS)
        driver_seq, pad_seq, style_seq = np.random.SeedSequence(
            [config.seed, config.scenario_id, EMOTION_ORDER.index(config.emotion_profile)]
        ).spawn(3)
        driver_rng = np.random.default_rng(driver_seq)
        style = config.sub_style_score
        if style is None:
            style = float(quantize(np.random.default_rng(style_seq).uniform(1.0, 5.0), EPISODE_DIGITS))

        gains = config.driver_gains
        speed0 = TURN_SPEED if config.scenario_id == 4 else gains.desired_speed
        crossing = CyclistCrossing(config, times) if config.scenario_id == 3 else None
        npcs = crossing.rows() if crossing is not None else ScenarioService.npc_tracks(config, times, speed0)
        path = TurnPath() if config.scenario_id == 4 else None
        process = EmotionProcess.for_profile(config.emotion_profile, config.emotion)

        start_x = TURN_EGO_START_X if config.scenario_id == 4 else 0.0
        ego = VehicleState(t=0.0, vehicle_id=EGO_ID, x=start_x, y=0.0, v=speed0, a=0.0, steer_deg=0.0,
                           throttle=0.0, brake=0.0, heading_rad=0.0)
        track = np.zeros((n, len(STATE_COLUMNS)))
        noise_state = 0.0
        for k in range(n):
            if crossing is not None:
                crossing.update(k, ego)
            label = process.regime(times[k], config.trigger_time).label
            context = ScenarioService.perceive(config, ego, npcs, k, path, style, noise_state)
            command = driver_step(ego, context, label, gains, driver_rng)
            noise_state = command.noise_state
            track[k] = [ego.x, ego.y, ego.v, command.accel, command.steer_deg, command.throttle, command.brake,
                        ego.heading_rad]
            ego = advance(ego, command, DT)

        pad = process.sample(times, config.trigger_time, np.random.default_rng(pad_seq))
        tracks = {EGO_ID: quantize(track, EPISODE_DIGITS)}
        if crossing is not None:
            npcs = crossing.tracks()
        tracks.update({vid: quantize(t, EPISODE_DIGITS) for vid, t in npcs.items()})
        return Episode(
            episode_id=config.episode_id,
            scenario_id=config.scenario_id,
            ego_id=EGO_ID,
            npc_ids=ScenarioService.npc_order(config.scenario_id),
            times=times,
            tracks=tracks,
            ego_pad=quantize(pad, EPISODE_DIGITS),
            sub_style_score=style,
            seed=config.seed,
            meta={
                "emotion_profile": config.emotion_profile.value,
                "trigger_time": config.trigger_time,
                "duration": config.duration,
            },
        )

    @staticmethod
    def annotate_ground_truth(
        episode: Episode,
        true_dbn: DbnModel,
        codec: CognitiveCodec,
        seed: int,
        bin_width: float = 0.2,
    ) -> List[CognitiveFrame]:
        """
        Cognitive frames whose stimulus states come from the kinematics and whose other
        states are sampled from `true_dbn` given them and the previous slice.
        """
        DbnService.check_codec(true_dbn, codec)
        names = codec.node_names
        fixed = -np.ones((episode.n_steps, len(names)), dtype=int)
        fixed[:, names.index("Risk_grade")] = [state_index(g) for g in DiscretizerService.risk_grades(episode)]
        npc_accel = episode.tracks[episode.npc_ids[0]][:, A] if episode.npc_ids else np.zeros(episode.n_steps)
        fixed[:, names.index("Npc_a")] = [codec.binning.to_state(bin_acceleration(a, bin_width)) for a in npc_accel]
        rows = DbnService.sample_conditioned(true_dbn, fixed, seed)
        return [codec.from_row(r) for r in rows]

    @staticmethod
    def dataset_configs(config: GenerateConfig) -> List[ScenarioConfig]:
        try:
            return [
                ScenarioConfig(
                    scenario_id=scenario,
                    emotion_profile=emotion,
                    trigger_time=config.trigger_time,
                    duration=config.duration,
                    seed=seed,
                )
                for scenario in config.scenarios
                for emotion in config.emotions
                for seed in range(config.seed, config.seed + config.episodes)
            ]
        except ValueError as e:
            raise ScenarioConfigError(f"invalid scenario settings: {e}")

    @staticmethod
    def generate_dataset(config: GenerateConfig, directory, workers: int = 1) -> Manifest:
        """
        Write `episodes` episodes per (scenario, emotion) cell from seeds seed..seed+episodes-1
        plus manifest.json.
        """
        start = time.time()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        configs = ScenarioService.dataset_configs(config)

        def build(cfg: ScenarioConfig):
            DatasetService.write_episode(ScenarioService.generate_episode(cfg), directory)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(build, configs))
        else:
            for cfg in configs:
                build(cfg)

        manifest = Manifest(configs=configs)
        (directory / "manifest.json").write_text(
            json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
        )
        log.info(f"Generated {len(configs)} episodes in {directory} in {(time.time() - start) * 1000:.2f}ms")
        return manifest
