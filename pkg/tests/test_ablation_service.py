from collections import namedtuple

import numpy as np
import pandas as pd
import pytest

from schemas.cognitive import EmoCluster
from schemas.metrics import HorizonMetrics, MetricReport
from schemas.run_config import AblationConfig, TrainConfig, Variant
from schemas.scenario import ScenarioConfig
from services.ablation_service import TABLE_COLUMNS, AblationService, split_episodes
from services.scenario_service import ScenarioService
from utils.errors import MissingArtifactError

Ep = namedtuple("Ep", ["episode_id", "scenario_id"])

TINY = TrainConfig(variant=Variant.P, t_p=1.0, t_f=0.4, stride=20, epochs=2, batch_size=8, gcn_width=4,
                   lstm_width=4, attention_width=4, offset_scale=5.0)


def ids(episodes):
    return sorted(e.episode_id for e in episodes)


def test_split_is_stratified_and_order_free():
    episodes = [Ep(f"s{s}_{k:02d}", s) for s in (1, 2, 3, 4) for k in range(10)]
    train, valid, test = split_episodes(episodes, [0.7, 0.15, 0.15], seed=4)
    assert (len(train), len(valid), len(test)) == (28, 8, 4)
    for part in (train, valid, test):
        assert {e.scenario_id for e in part} == {1, 2, 3, 4}
    assert set(ids(train)) | set(ids(valid)) | set(ids(test)) == set(ids(episodes))
    again = split_episodes(list(reversed(episodes)), [0.7, 0.15, 0.15], seed=4)
    assert [ids(p) for p in again] == [ids(train), ids(valid), ids(test)]
    other = split_episodes(episodes, [0.7, 0.15, 0.15], seed=5)
    assert ids(other[0]) != ids(train)


def test_small_scenarios_keep_every_split():
    episodes = [Ep(f"s1_{k}", 1) for k in range(3)]
    train, valid, test = split_episodes(episodes, [0.7, 0.15, 0.15], seed=0)
    assert (len(train), len(valid), len(test)) == (1, 1, 1)


def report(variant, scenario, seed, rmse, fde_value):
    steps = [rmse, fde_value]
    return MetricReport(
        variant=variant, scenario_id=scenario, n_samples=4, seed=seed,
        horizons=[HorizonMetrics(horizon_s=1.0, rmse_per_step=steps, mae=rmse, ade=float(np.mean(steps)),
                                 fde=fde_value, pooled_rmse=rmse)],
    )


@pytest.fixture
def reports():
    return [
        report(Variant.CP, 1, 0, 1.4, 3.0),
        report(Variant.CP, 1, 1, 1.6, 3.0),
        report(Variant.P, 1, 0, 2.0, 4.0),
        report(Variant.P, 1, 1, 2.0, 4.0),
        report(Variant.P, None, 0, 9.0, 9.0),
    ]


def test_table_aggregates_over_seeds(reports):
    table = AblationService.table(reports)
    assert list(table.columns) == TABLE_COLUMNS
    assert list(table["variant"]) == ["p", "cp"]
    cp = table[table["variant"] == "cp"].iloc[0]
    assert cp["n_seeds"] == 2 and cp["n_samples"] == 8
    assert cp["rmse_mean"] == pytest.approx(1.5)
    assert cp["rmse_std"] == pytest.approx(0.1)
    assert cp["rmse_decrease_vs_p"] == pytest.approx(25.0)
    assert cp["fde_decrease_vs_p"] == pytest.approx(25.0)
    assert table[table["variant"] == "p"].iloc[0]["rmse_decrease_vs_p"] == 0.0


def test_table_without_baseline(reports):
    table = AblationService.table(reports[:2])
    assert np.isnan(table.iloc[0]["rmse_decrease_vs_p"])
    assert AblationService.table([]).empty


def test_markdown(reports):
    text = AblationService.markdown(AblationService.table(reports))
    assert "## Horizon 1 s" in text
    assert "| Scenario | P ADE | P FDE | CP ADE | CP FDE |" in text
    assert "| 1 | 3.00 | 4.00 | 2.25 | 3.00 |" in text
    assert "CP vs P, scenario 1: RMSE decreased by 25.00%, FDE decreased by 25.00%" in text


def test_cognitive_variants_need_their_dbn(short_episodes, codec):
    with pytest.raises(MissingArtifactError):
        AblationService.run_ablation(short_episodes, codec, TINY, AblationConfig(seeds=[0]), 50.0,
                                     variants=[Variant.CP])


@pytest.fixture(scope="module")
def ablation_episodes():
    return [
        ScenarioService.generate_episode(ScenarioConfig(scenario_id=s, emotion_profile=EmoCluster.ANGER,
                                                        duration=3.0, trigger_time=1.0, seed=k))
        for s in (1, 2) for k in range(3)
    ]


def test_physical_only_ablation(ablation_episodes, codec, tmp_path):
    config = AblationConfig(horizons=[0.4], seeds=[0])
    result = AblationService.run_ablation(ablation_episodes, codec, TINY, config, 50.0, variants=[Variant.P])
    assert [r.scenario_id for r in result.reports] == [1, 2, None]
    assert list(result.table["scenario_id"]) == [1, 2]

    threaded = AblationService.run_ablation(ablation_episodes, codec, TINY, config, 50.0, variants=[Variant.P],
                                            workers=2)
    pd.testing.assert_frame_equal(threaded.table, result.table)

    AblationService.write(result, tmp_path)
    assert (tmp_path / "ablation.md").read_text().startswith("# Ablation")
    assert len(pd.read_csv(tmp_path / "ablation.csv")) == 2
    assert len(pd.read_csv(tmp_path / "ablation_reports.csv")) == 3
