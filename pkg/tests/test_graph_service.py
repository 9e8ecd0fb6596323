import math

import numpy as np
import pytest

from schemas.graph import FeatureNormalizer, GraphKind
from services.dataset_service import DatasetService
from services.graph_service import GraphService, normalize_adjacency, one_hot_states, physical_adjacency
from utils.errors import GraphError


def test_physical_adjacency_weights_and_cutoff():
    positions = np.array([[0.0, 0.0], [3.0, 4.0], [100.0, 0.0]])
    a = physical_adjacency(positions, d_close=50.0)
    assert a[0, 1] == pytest.approx(math.exp(-5.0))
    assert a[0, 2] == 0.0 and a[1, 2] == 0.0
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0.0)


def test_physical_adjacency_rejects_nan():
    with pytest.raises(GraphError):
        physical_adjacency(np.array([[0.0, np.nan], [1.0, 1.0]]), 10.0)


def test_normalize_adjacency():
    assert np.allclose(normalize_adjacency(np.zeros((3, 3))), np.eye(3))
    assert np.allclose(normalize_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]])), 0.5)
    stacked = normalize_adjacency(np.zeros((4, 2, 2)))
    assert stacked.shape == (4, 2, 2)
    with pytest.raises(GraphError):
        normalize_adjacency(np.zeros((2, 3)))
    with pytest.raises(GraphError):
        normalize_adjacency(-np.ones((2, 2)))


def test_one_hot_pads_to_width():
    encoded = one_hot_states(np.array([0, 2]), 4)
    assert np.array_equal(encoded, [[1, 0, 0, 0], [0, 0, 1, 0]])


def test_physical_graph_sorted_by_vehicle(short_episodes):
    episode = short_episodes[4]
    snapshot = GraphService.build_physical_graph(episode.states_at(10), d_close=50.0)
    assert snapshot.kind == GraphKind.PHYSICAL
    assert snapshot.node_ids == sorted(episode.vehicle_ids)
    ego = snapshot.node_ids.index("ego")
    assert snapshot.node_features[ego, 0] == episode.tracks["ego"][10, 0]


def test_edge_tables_are_child_conditionals(chain_model):
    tables = GraphService.edge_tables(chain_model)
    assert set(tables) == {("S", "O"), ("O", "R")}
    assert np.allclose(tables[("S", "O")], chain_model.intra_cpts["O"].table)
    assert np.allclose(tables[("O", "R")], chain_model.intra_cpts["R"].table)


def test_cognitive_adjacency_follows_dbn_edges(chain_model):
    a = GraphService.cognitive_adjacency(np.array([1, 2, 0]), chain_model)
    expected = np.zeros((3, 3))
    expected[1, 0] = chain_model.intra_cpts["O"].row([1])[2]
    expected[2, 1] = chain_model.intra_cpts["R"].row([2])[0]
    assert np.allclose(a, expected)
    with pytest.raises(GraphError):
        GraphService.cognitive_adjacency(np.array([0, 3, 0]), chain_model)


def test_cognitive_graph_from_frame(discretized, ordinary_model, codec, short_episodes):
    frame = discretized.frames[short_episodes[0].episode_id][40]
    snapshot = GraphService.build_cognitive_graph(frame, ordinary_model, codec)
    assert snapshot.node_ids == codec.node_names
    assert snapshot.node_features.shape == (len(codec.node_names), 27)
    assert np.allclose(snapshot.node_features.sum(axis=1), 1.0)


def test_snapshot_dump(short_episodes, tmp_path):
    snapshot = GraphService.build_physical_graph(short_episodes[0].states_at(0), d_close=50.0)
    text = GraphService.dump_snapshot(snapshot, tmp_path / "graph.txt").read_text().splitlines()
    n = len(snapshot.node_ids)
    assert text[0] == "# kind physical"
    assert len(text) == 3 + n + 1 + n


def test_episode_preparation_matches_per_sample(discretized, ordinary_model, codec, short_episodes):
    episode = short_episodes[2]
    frames = discretized.frames[episode.episode_id]
    samples = DatasetService.window_samples(episode, 1.0, 1.0, 10, frames)
    normalizer = FeatureNormalizer.fit(episode.tracks["ego"][:, :4])
    tables = GraphService.edge_tables(ordinary_model)
    batched = GraphService.prepare_episode(episode, samples, normalizer, 50.0, frames, codec, ordinary_model,
                                           tables, dbn="ordinary")
    assert len(batched) == len(samples)
    for sample, prepared in zip(samples, batched):
        single = GraphService.prepare_sample(sample, normalizer, 50.0, codec, ordinary_model, tables, dbn="ordinary")
        assert prepared.key == single.key
        assert prepared.dbn == "ordinary"
        assert np.allclose(prepared.phys_features, single.phys_features)
        assert np.allclose(prepared.phys_adjacency, single.phys_adjacency)
        assert np.allclose(prepared.cog_adjacency, single.cog_adjacency)
        assert np.array_equal(prepared.cog_features, single.cog_features)
        assert np.array_equal(prepared.future_xy, single.future_xy)


def test_model_without_frames(short_episodes, ordinary_model, codec):
    sample = DatasetService.window_samples(short_episodes[0], 1.0, 1.0, 10)[0]
    with pytest.raises(GraphError):
        GraphService.prepare_sample(sample, FeatureNormalizer.identity(), 50.0, codec, ordinary_model)
    prepared = GraphService.prepare_sample(sample, FeatureNormalizer.identity(), 50.0)
    assert prepared.cog_features is None and prepared.dbn is None
