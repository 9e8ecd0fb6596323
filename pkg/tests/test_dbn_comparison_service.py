import numpy as np
import pandas as pd
import pytest

from schemas.dbn import Penalty, Prior
from services.dbn_comparison_service import (
    DbnComparisonService, empirical_conditional, model_conditional, total_variation,
)
from services.dbn_service import DbnService
from services.structure_search_service import StructureSearchService
from utils.errors import DbnError


@pytest.fixture(scope="module")
def data_by_scenario(discretized, short_episodes, codec):
    grouped = {}
    for episode in short_episodes:
        grouped.setdefault(str(episode.scenario_id), []).append(
            codec.to_array(discretized.frames[episode.episode_id]))
    return grouped


def test_empirical_conditional_by_hand():
    frames = np.array([[0, 1], [0, 1], [0, 0], [1, 0]])
    freq, support = empirical_conditional(frames, 0, 1, 3, 2)
    assert np.allclose(freq, [[1 / 3, 2 / 3], [1.0, 0.0], [0.0, 0.0]])
    assert support.tolist() == [3, 1, 0]


def test_total_variation_weights_by_support():
    curve = np.array([[1.0, 0.0], [0.5, 0.5]])
    empirical = np.array([[0.0, 1.0], [0.5, 0.5]])
    assert total_variation(curve, empirical, np.array([1.0, 3.0])) == pytest.approx(0.25)
    assert total_variation(curve, empirical, np.zeros(2)) == 0.0


def test_model_conditional_of_a_single_parent(chain_model):
    assert np.allclose(model_conditional(chain_model, "S", "O"), chain_model.intra_cpts["O"].table)


def test_identical_models_score_identically(data_by_scenario, ordinary_model, tmp_path):
    report = DbnComparisonService.compare(data_by_scenario, ordinary_model, ordinary_model)
    bic = report.bic
    assert len(bic) == 5 * 2 * 2
    assert list(dict.fromkeys(bic["scenario"])) == ["1", "2", "3", "4", "all"]
    sor = bic[bic["model"] == "sor"].reset_index(drop=True)
    ordinary = bic[bic["model"] == "ordinary"].reset_index(drop=True)
    assert np.allclose(sor["bic"], ordinary["bic"])
    pooled = bic[(bic["scenario"] == "all") & (bic["model"] == "sor")]
    assert pooled["frames"].iloc[0] == sum(len(s) for seqs in data_by_scenario.values() for s in seqs)

    curves = report.curves
    assert set(curves["condition"]) == {"Ego_a|Npc_a", "Ego_a|Sub_style"}
    assert np.allclose(curves["sor"], curves["ordinary"])
    tv = report.total_variation.set_index(["condition", "model"])["total_variation"]
    assert tv[("Ego_a|Npc_a", "sor")] == pytest.approx(tv[("Ego_a|Npc_a", "ordinary")])

    paths = DbnComparisonService.write(report, tmp_path)
    assert [p.name for p in paths] == ["dbn_bic.csv", "dbn_curves.csv", "dbn_tv.csv"]
    assert len(pd.read_csv(paths[0])) == len(bic)


def test_node_sets_must_match(chain_model, ordinary_model, data_by_scenario):
    with pytest.raises(DbnError):
        DbnComparisonService.compare(data_by_scenario, chain_model, ordinary_model)


@pytest.mark.slow
def test_layered_structure_outscores_the_ordinary_one(discretized, data_by_scenario, ordinary_model, codec):
    _, sequences = DbnService.frames_to_sequences(discretized.frames, codec)
    sor_model = StructureSearchService.search(codec.node_specs(), sequences, prior=Prior.SOR, seed=0,
                                              restarts=2).model
    bic = DbnComparisonService.compare(data_by_scenario, sor_model, ordinary_model).bic
    bic = bic[bic["penalty"] == Penalty.PARAMS.value].set_index(["scenario", "model"])["bic"]
    for scenario in ("1", "2", "3", "4"):
        assert bic[(scenario, "sor")] >= bic[(scenario, "ordinary")]
