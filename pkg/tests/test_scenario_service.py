import json

import numpy as np
import pytest
from pydantic import ValidationError

from schemas.cognitive import EmoCluster, RiskGrade
from schemas.run_config import GenerateConfig
from schemas.scenario import PAD_ANGER, PAD_SLIGHT_FRIGHT, CrossingSettings, EmotionProcess, ScenarioConfig
from schemas.trajectory import A, BRAKE, V, X, Y
from services.dataset_service import DatasetService
from services.ttc_service import compute_ttc
from services.discretizer_service import DiscretizerService, bin_acceleration
from services.scenario_service import (
    CUT_IN_DURATION, LEAD_BRAKE_DECEL, TURN_EGO_START_X, ScenarioService, TurnPath, bezier3,
)
from utils.errors import ScenarioConfigError


def config(scenario_id, emotion=EmoCluster.NEUTRAL, **overrides):
    values = dict(scenario_id=scenario_id, emotion_profile=emotion, duration=6.0, trigger_time=2.0, seed=1,
                  sub_style_score=3.0)
    values.update(overrides)
    return ScenarioConfig(**values)


def step_at(episode, t):
    return int(np.argmin(np.abs(episode.times - t)))


def test_bezier_endpoints_and_domain():
    p = [(0, 0), (1, 2), (3, 2), (4, 0)]
    assert np.allclose(bezier3(*p, 0.0), (0, 0))
    assert np.allclose(bezier3(*p, 1.0), (4, 0))
    assert np.allclose(bezier3(*p, 0.5), (2.0, 1.5))
    with pytest.raises(ValueError):
        bezier3(*p, 1.2)


def test_episode_is_a_function_of_its_config():
    a = ScenarioService.generate_episode(config(2, EmoCluster.ANGER, sub_style_score=None))
    b = ScenarioService.generate_episode(config(2, EmoCluster.ANGER, sub_style_score=None))
    c = ScenarioService.generate_episode(config(2, EmoCluster.ANGER, sub_style_score=None, seed=2))
    assert a.episode_id == "s2_anger_00001"
    for vid in a.vehicle_ids:
        assert np.array_equal(a.tracks[vid], b.tracks[vid])
    assert np.array_equal(a.ego_pad, b.ego_pad)
    assert a.sub_style_score == b.sub_style_score
    assert not np.array_equal(a.ego_pad, c.ego_pad)
    assert a.n_steps == 150


def test_lead_brake_scenario():
    episode = ScenarioService.generate_episode(config(1))
    ego, lead = episode.tracks["ego"], episode.tracks["npc1"]
    before = step_at(episode, 2.0)
    # the ego starts at its equilibrium gap behind the lead
    assert np.allclose(ego[:before, V], 20.0, atol=0.1)
    assert lead[step_at(episode, 3.0), V] == pytest.approx(20.0 - LEAD_BRAKE_DECEL, abs=1e-6)
    assert lead[step_at(episode, 5.5), V] == pytest.approx(0.0, abs=1e-9)
    assert ego[before:, A].min() < -3.0


def test_cut_in_path():
    episode = ScenarioService.generate_episode(config(2))
    npc = episode.tracks["npc1"]
    assert np.allclose(npc[:step_at(episode, 2.0), Y], 3.5)
    assert np.allclose(npc[step_at(episode, 5.04):, Y], 0.0)
    assert np.all(np.diff(npc[:, X]) > 0)


def test_anger_speeds_up_before_the_trigger():
    angry = ScenarioService.generate_episode(config(3, EmoCluster.ANGER))
    calm = ScenarioService.generate_episode(config(3))
    k = step_at(angry, 1.96)
    assert angry.tracks["ego"][k, V] > calm.tracks["ego"][k, V] + 2.0
    assert calm.tracks["ego"][k, V] == pytest.approx(20.0, abs=0.1)
    assert angry.vehicle_ids == ["cyclist", "ego", "parked"]


def test_left_turn_start():
    episode = ScenarioService.generate_episode(config(4))
    ego = episode.tracks["ego"]
    assert ego[0, X] == TURN_EGO_START_X
    assert ego[0, V] == 10.0
    assert episode.npc_ids == ["npc1"]


def test_emotion_regime_switches_after_delay():
    process = EmotionProcess.for_profile(EmoCluster.ANGER)
    assert process.regime(3.4, 2.0).mean == PAD_ANGER
    assert process.regime(3.5, 2.0).mean == PAD_SLIGHT_FRIGHT
    pad = process.sample(np.arange(0, 6, 0.04), 2.0, np.random.default_rng(0))
    assert pad.shape == (150, 3)
    assert np.all(np.abs(pad) <= 1.0)
    assert np.allclose(pad[:40].mean(axis=0), PAD_ANGER, atol=0.05)
    assert np.allclose(pad[-10:].mean(axis=0), PAD_SLIGHT_FRIGHT, atol=0.1)


def test_invalid_configs():
    with pytest.raises(ValidationError):
        ScenarioConfig(scenario_id=5, emotion_profile=EmoCluster.ANGER)
    with pytest.raises(ValidationError):
        ScenarioConfig(scenario_id=1, emotion_profile=EmoCluster.ANGER, trigger_time=12.0, duration=10.0)
    with pytest.raises(ScenarioConfigError):
        ScenarioService.dataset_configs(GenerateConfig(episodes=1, duration=3.0, trigger_time=4.0))


def test_dataset_configs_cover_every_cell():
    configs = ScenarioService.dataset_configs(GenerateConfig(episodes=2, scenarios=[1, 2], seed=10))
    assert len(configs) == 2 * 3 * 2
    assert {c.seed for c in configs} == {10, 11}
    assert len({c.episode_id for c in configs}) == len(configs)


def test_generate_dataset_writes_manifest(tmp_path):
    cfg = GenerateConfig(episodes=1, scenarios=[1, 3], emotions=[EmoCluster.FRIGHT], duration=3.0, trigger_time=1.0)
    manifest = ScenarioService.generate_dataset(cfg, tmp_path, workers=2)
    assert len(manifest.configs) == 2
    written = json.loads((tmp_path / "manifest.json").read_text())
    assert len(written["configs"]) == 2
    episodes = DatasetService.load_dataset(tmp_path)
    assert [e.episode_id for e in episodes] == ["s1_fright_00000", "s3_fright_00000"]


def test_ground_truth_keeps_the_kinematic_stimuli(short_episodes, ordinary_model, codec):
    episode = short_episodes[0]
    frames = ScenarioService.annotate_ground_truth(episode, ordinary_model, codec, seed=3)
    assert len(frames) == episode.n_steps
    assert [f.risk_grade for f in frames] == DiscretizerService.risk_grades(episode)
    rows = codec.to_array(frames)
    npc = episode.tracks["npc1"][:, A]
    expected = [codec.binning.to_state(bin_acceleration(a)) for a in npc]
    assert rows[:, codec.node_names.index("Npc_a")].tolist() == expected
    again = ScenarioService.annotate_ground_truth(episode, ordinary_model, codec, seed=3)
    assert again == frames


def cyclist_start_step(episode):
    moving = np.flatnonzero(episode.tracks["cyclist"][:, V] > 0)
    assert len(moving), "the cyclist never starts"
    return int(moving[0]) - 1


@pytest.mark.parametrize("trigger", [2.0, 4.0, 6.0])
def test_cyclist_crosses_ahead_of_the_ego_for_any_trigger(trigger):
    episode = ScenarioService.generate_episode(config(3, duration=10.0, trigger_time=trigger))
    k = cyclist_start_step(episode)
    assert k == step_at(episode, trigger)
    gap = episode.tracks["cyclist"][k, X] - episode.tracks["ego"][k, X]
    assert 0.0 < gap <= CrossingSettings().start_range + 1e-6
    assert np.allclose(episode.tracks["cyclist"][:k + 1, Y], -5.0)
    grades = DiscretizerService.risk_grades(episode)
    assert grades[k:].count(RiskGrade.DANGER) > 0


def test_cyclist_waits_for_the_ego_to_come_within_range():
    crossing = CrossingSettings(lead=60.0, start_range=30.0)
    episode = ScenarioService.generate_episode(config(3, duration=10.0, trigger_time=2.0, crossing=crossing))
    k = cyclist_start_step(episode)
    assert episode.times[k] > 3.0
    gap = episode.tracks["cyclist"][k, X] - episode.tracks["ego"][k, X]
    assert 29.0 < gap <= 30.0 + 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_lead_braking_shortens_the_time_to_collision(seed):
    episode = ScenarioService.generate_episode(
        ScenarioConfig(scenario_id=1, emotion_profile=EmoCluster.NEUTRAL, seed=seed))
    trigger = step_at(episode, episode.meta["trigger_time"])
    ttc = [compute_ttc(episode.state("ego", k), episode.state("npc1", k)) for k in range(episode.n_steps)]
    assert min(ttc[trigger:]) < min(ttc[:trigger])


def test_cut_in_moves_monotonically_toward_the_ego_lane():
    episode = ScenarioService.generate_episode(config(2, duration=8.0))
    lo, hi = step_at(episode, 2.0), step_at(episode, 2.0 + CUT_IN_DURATION)
    y = episode.tracks["npc1"][lo:hi + 1, Y]
    assert np.all(np.diff(y) <= 1e-9)
    assert y[0] == pytest.approx(3.5) and y[-1] == pytest.approx(0.0)


def lateral_deviation(episode):
    ego = episode.tracks["ego"]
    if episode.scenario_id != 4:
        return np.abs(ego[:, Y])
    path = TurnPath()
    return np.abs([path.frame(x, y)[1] for x, y in ego[:, [X, Y]]])


@pytest.fixture(scope="module")
def profile_episodes():
    return {
        (sid, emotion): [ScenarioService.generate_episode(ScenarioConfig(scenario_id=sid, emotion_profile=emotion,
                                                                         seed=seed))
                         for seed in range(20)]
        for sid in (1, 2, 3, 4)
        for emotion in (EmoCluster.ANGER, EmoCluster.NEUTRAL, EmoCluster.FRIGHT)
    }


@pytest.mark.slow
@pytest.mark.parametrize("scenario_id", [1, 2, 3, 4])
def test_emotion_profiles_shape_the_driving(profile_episodes, scenario_id):
    def mean_lateral(emotion):
        return np.mean([lateral_deviation(e).mean() for e in profile_episodes[(scenario_id, emotion)]])

    def mean_max_brake(emotion):
        return np.mean([np.abs(e.tracks["ego"][:, BRAKE]).max() for e in profile_episodes[(scenario_id, emotion)]])

    assert mean_lateral(EmoCluster.ANGER) > mean_lateral(EmoCluster.NEUTRAL)
    assert mean_max_brake(EmoCluster.FRIGHT) > mean_max_brake(EmoCluster.NEUTRAL)
