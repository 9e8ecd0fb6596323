import itertools

import numpy as np
import pandas as pd
import pytest

from schemas.dbn import Cpt, DbnModel, DbnStructure, Layer, NodeSpec, Prior
from services.dbn_service import DbnService
from services.structure_search_service import StructureSearchService, skeleton, structural_hamming_distance
from tests.conftest import random_model


def noisy_copy_data(n_frames: int, seed: int, noise: float = 0.05):
    """S uniform, O a noisy copy of S, R a noisy copy of O; frames are independent over time."""
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 2, n_frames)
    o = np.where(rng.random(n_frames) < noise, 1 - s, s)
    r = np.where(rng.random(n_frames) < noise, 1 - o, o)
    return [np.column_stack([s, o, r])[k:k + 100] for k in range(0, n_frames, 100)]


@pytest.fixture
def binary_nodes():
    return [
        NodeSpec(name="S", cardinality=2, layer=Layer.STIMULUS),
        NodeSpec(name="O", cardinality=2, layer=Layer.ORGANISM),
        NodeSpec(name="R", cardinality=2, layer=Layer.RESPONSE),
    ]


def neighbours(structure: DbnStructure):
    names = structure.names
    edges = set(structure.intra_edges)
    for u in names:
        for v in names:
            if u == v:
                continue
            if (u, v) in edges:
                candidates = [edges - {(u, v)}, (edges - {(u, v)}) | {(v, u)}]
            elif (v, u) not in edges:
                candidates = [edges | {(u, v)}]
            else:
                continue
            for candidate in candidates:
                try:
                    yield structure.with_edges(sorted(candidate))
                except ValueError:
                    continue


def test_sor_search_recovers_the_chain(binary_nodes):
    data = noisy_copy_data(2000, seed=0)
    result = StructureSearchService.search(binary_nodes, data, prior=Prior.SOR, restarts=3, search_inter=False)
    assert sorted(result.model.structure.intra_edges) == [("O", "R"), ("S", "O")]
    assert result.model.structure.sor_violations() == []


def test_unconstrained_search_recovers_the_skeleton(binary_nodes):
    data = noisy_copy_data(2000, seed=1)
    model = StructureSearchService.hill_climb(binary_nodes, data, prior=Prior.NONE, restarts=3, search_inter=False)
    assert skeleton(model.structure) == {frozenset(("S", "O")), frozenset(("O", "R"))}


def test_result_is_a_local_optimum(binary_nodes):
    rng = np.random.default_rng(5)
    data = [rng.integers(0, 2, (60, 3)) for _ in range(5)]
    data[0][:, 2] = data[0][:, 0]
    result = StructureSearchService.search(binary_nodes, data, prior=Prior.NONE, restarts=4, search_inter=False)
    best = result.model.structure
    score = StructureSearchService.structure_score(binary_nodes, data, best)
    assert score == pytest.approx(result.score)
    for neighbour in neighbours(best):
        assert StructureSearchService.structure_score(binary_nodes, data, neighbour) <= score + 1e-9


def test_structure_score_matches_fitted_bic(binary_nodes):
    data = noisy_copy_data(500, seed=2)
    structure = DbnStructure(nodes=binary_nodes, intra_edges=[("S", "O")], inter_edges=[("R", "R")])
    fitted = DbnService.mle_fit(structure, data)
    assert StructureSearchService.structure_score(binary_nodes, data, structure) == pytest.approx(
        DbnService.bic_score(fitted, data)
    )


def test_search_is_deterministic(binary_nodes):
    rng = np.random.default_rng(9)
    data = [rng.integers(0, 2, (80, 3)) for _ in range(4)]
    a = StructureSearchService.search(binary_nodes, data, seed=3, restarts=4)
    b = StructureSearchService.search(binary_nodes, data, seed=3, restarts=4)
    assert a.model.structure.edge_key() == b.model.structure.edge_key()
    assert a.steps == b.steps


def test_max_parents_is_respected(binary_nodes):
    rng = np.random.default_rng(4)
    s = rng.integers(0, 2, 3000)
    o = rng.integers(0, 2, 3000)
    r = s ^ o
    r = np.where(rng.random(3000) < 0.02, 1 - r, r)
    data = [np.column_stack([s, o, r])]
    model = StructureSearchService.hill_climb(binary_nodes, data, prior=Prior.NONE, restarts=2,
                                              search_inter=False, max_parents=1)
    assert all(len(model.structure.parents(n)) <= 1 for n in model.structure.names)


def test_persistent_state_gains_a_self_transition(binary_nodes):
    rng = np.random.default_rng(6)
    seqs = []
    for _ in range(10):
        o = np.repeat(rng.integers(0, 2, 10), 20)
        seqs.append(np.column_stack([rng.integers(0, 2, 200), o, rng.integers(0, 2, 200)]))
    model = StructureSearchService.hill_climb(binary_nodes, seqs, restarts=1)
    assert model.structure.has_inter("O")
    assert not model.structure.has_inter("S")


def test_bic_log_has_both_penalties(binary_nodes, tmp_path):
    result = StructureSearchService.search(binary_nodes, noisy_copy_data(400, seed=3), restarts=2)
    path = StructureSearchService.write_log(result.steps, tmp_path / "bic_log.csv")
    log = pd.read_csv(path)
    assert {"restart", "iteration", "operation", "bic_params", "bic_nodes"} <= set(log.columns)
    assert len(log) == len(result.steps)
    assert list(log["operation"][:1]) == ["start"]
    for r in {s.restart for s in result.steps}:
        scores = [s.bic_params for s in result.steps if s.restart == r]
        assert np.all(np.diff(scores) > 0)


def test_shd_counts_reversals_once(binary_nodes):
    a = DbnStructure(nodes=binary_nodes, intra_edges=[("S", "O"), ("O", "R")])
    b = DbnStructure(nodes=binary_nodes, intra_edges=[("O", "S")])
    assert structural_hamming_distance(a, a) == 0
    assert structural_hamming_distance(a, b) == 2


def _noisy_copy_cpt(child: str, parent, card: int, keep: float) -> Cpt:
    if parent is None:
        return Cpt(child=child, parents=[], parent_cardinalities=[], table=np.full((1, card), 1.0 / card))
    table = np.full((card, card), (1.0 - keep) / (card - 1))
    np.fill_diagonal(table, keep)
    return Cpt(child=child, parents=[parent], parent_cardinalities=[card], table=table)


@pytest.mark.slow
def test_search_recovers_a_sampled_tree():
    layers = {"A": Layer.STIMULUS, "B": Layer.ORGANISM, "C": Layer.ORGANISM, "D": Layer.RESPONSE,
              "E": Layer.RESPONSE}
    nodes = [NodeSpec(name=n, cardinality=3, layer=layer) for n, layer in layers.items()]
    edges = [("A", "B"), ("B", "C"), ("B", "D"), ("D", "E")]
    truth = DbnStructure(nodes=nodes, intra_edges=edges)
    parent_of = {v: u for u, v in edges}
    model = DbnModel(
        structure=truth,
        intra_cpts={n: _noisy_copy_cpt(n, parent_of.get(n), 3, 0.8) for n in layers},
    )
    data = [DbnService.sample(model, 250, seed=k) for k in range(20)]
    learned = StructureSearchService.hill_climb(nodes, data, prior=Prior.SOR, restarts=4)
    assert structural_hamming_distance(learned.structure, truth) <= 1
    assert learned.structure.sor_violations() == []


def all_dags(structure: DbnStructure):
    pairs = list(itertools.permutations(structure.names, 2))
    for mask in itertools.product((False, True), repeat=len(pairs)):
        try:
            yield structure.with_edges([p for p, keep in zip(pairs, mask) if keep])
        except ValueError:
            continue


@pytest.mark.slow
@pytest.mark.parametrize("truth_edges", [
    [],
    [("S", "O"), ("O", "R")],
    [("O", "S"), ("O", "R")],
    [("S", "O"), ("R", "O")],
    [("S", "O"), ("S", "R"), ("O", "R")],
])
def test_search_ties_the_exhaustive_optimum(truth_edges):
    nodes = [
        NodeSpec(name="S", cardinality=2, layer=Layer.STIMULUS),
        NodeSpec(name="O", cardinality=3, layer=Layer.ORGANISM),
        NodeSpec(name="R", cardinality=2, layer=Layer.RESPONSE),
    ]
    truth = DbnStructure(nodes=nodes, intra_edges=truth_edges)
    data = [DbnService.sample(random_model(truth, seed=len(truth_edges) + 11), 10000, seed=4)]
    dags = list(all_dags(truth))
    assert len(dags) == 25
    optimum = max(StructureSearchService.structure_score(nodes, data, dag) for dag in dags)
    for seed in range(3):
        result = StructureSearchService.search(nodes, data, prior=Prior.NONE, seed=seed, search_inter=False)
        assert result.score == pytest.approx(optimum, abs=1e-6)
