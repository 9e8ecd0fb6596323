"""
Physical and cognitive graph snapshots, and their stacked form for the predictor.
"""
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from schemas.cognitive import CognitiveCodec, CognitiveFrame
from schemas.dbn import DbnModel
from schemas.graph import FeatureNormalizer, GraphKind, GraphSnapshot
from schemas.predictor import PreparedSample
from schemas.trajectory import A, V, X, Y, Episode, Sample, VehicleState
from services.dbn_service import DbnService
from utils.errors import GraphError, InconsistentEvidenceError
from utils.logger_factory import new_logger
from utils.number_format import EPISODE_DIGITS, format_row

log = new_logger("graph_service")

FEATURE_COLUMNS = [X, Y, V, A]

EdgeTables = Dict[Tuple[str, str], np.ndarray]


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """
    D^-1/2 (A + I) D^-1/2 with D the row sums of A + I.

    Works on a single (n, n) matrix or any stack (..., n, n).
    """
    a = np.asarray(adjacency, dtype=float)
    if a.shape[-1] != a.shape[-2]:
        raise GraphError(f"adjacency must be square, got {a.shape}")
    if np.any(a < 0):
        raise GraphError("adjacency must be non-negative")
    tilde = a + np.eye(a.shape[-1])
    inv_sqrt = 1.0 / np.sqrt(tilde.sum(axis=-1))
    return inv_sqrt[..., :, None] * tilde * inv_sqrt[..., None, :]


def physical_adjacency(positions: np.ndarray, d_close: float) -> np.ndarray:
    """exp(-d) where 0 <= d < d_close off the diagonal, else 0; positions is (..., n, 2)."""
    if not np.all(np.isfinite(positions)):
        raise GraphError("vehicle positions must be finite")
    diff = positions[..., :, None, :] - positions[..., None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    weights = np.where(dist < d_close, np.exp(-dist), 0.0)
    n = positions.shape[-2]
    weights[..., np.arange(n), np.arange(n)] = 0.0
    return weights


def one_hot_states(rows: np.ndarray, width: int) -> np.ndarray:
    """(..., nodes) integer states -> (..., nodes, width) one-hot, zero-padded past each node's cardinality."""
    return (rows[..., None] == np.arange(width)).astype(float)


class GraphService:
    """Builds snapshots; `prepare_sample` stacks them over a history window."""

    @staticmethod
    def build_physical_graph(
        states: List[VehicleState],
        d_close: float,
        normalizer: Optional[FeatureNormalizer] = None,
    ) -> GraphSnapshot:
        if not states:
            raise GraphError("a physical graph needs at least one vehicle")
        ordered = sorted(states, key=lambda s: s.vehicle_id)
        raw = np.array([[s.x, s.y, s.v, s.a] for s in ordered], dtype=float)
        features = (normalizer or FeatureNormalizer.identity()).transform(raw)
        return GraphSnapshot(
            node_features=features,
            adjacency=physical_adjacency(raw[:, :2], d_close),
            node_ids=[s.vehicle_id for s in ordered],
            kind=GraphKind.PHYSICAL,
        )

    @staticmethod
    def edge_tables(model: DbnModel) -> EdgeTables:
        """
        P(child state | parent state) for every intra edge, as (card_parent, card_child).

        Other parents of the child are marginalized under the slice distribution. A parent
        state with zero marginal probability gets an all-zero row.
        """
        tables = {}
        for parent, child in model.structure.intra_edges:
            joint = DbnService.joint(model, [parent, child])
            mass = joint.sum(axis=1, keepdims=True)
            tables[(parent, child)] = np.divide(joint, mass, out=np.zeros_like(joint), where=mass > 0)
        return tables

    @staticmethod
    def cognitive_adjacency(rows: np.ndarray, model: DbnModel, tables: Optional[EdgeTables] = None) -> np.ndarray:
        """(..., nodes) states -> (..., nodes, nodes) with A[i][j] = P(state_i | state_j) on DBN edges j -> i."""
        s = model.structure
        rows = np.asarray(rows, dtype=int)
        cards = np.array([spec.cardinality for spec in s.nodes])
        if np.any(rows < 0) or np.any(rows >= cards):
            raise GraphError("cognitive state outside the model's cardinality")
        tables = tables if tables is not None else GraphService.edge_tables(model)
        adjacency = np.zeros(rows.shape + (len(cards),))
        for (parent, child), table in tables.items():
            i, j = s.index(child), s.index(parent)
            adjacency[..., i, j] = table[rows[..., j], rows[..., i]]
        return adjacency

    @staticmethod
    def build_cognitive_graph(
        frame: CognitiveFrame,
        model: DbnModel,
        codec: CognitiveCodec,
        tables: Optional[EdgeTables] = None,
    ) -> GraphSnapshot:
        DbnService.check_codec(model, codec)
        row = codec.to_row(frame)
        width = max(spec.cardinality for spec in model.structure.nodes)
        return GraphSnapshot(
            node_features=one_hot_states(row, width),
            adjacency=GraphService.cognitive_adjacency(row, model, tables),
            node_ids=model.structure.names,
            kind=GraphKind.COGNITIVE,
        )

    @staticmethod
    def dump_snapshot(snapshot: GraphSnapshot, path) -> Path:
        """Row-major text dump of features and adjacency at 9 significant digits."""
        lines = [f"# kind {snapshot.kind.value}", f"# nodes {' '.join(snapshot.node_ids)}", "features"]
        lines += [format_row(r, EPISODE_DIGITS) for r in snapshot.node_features]
        lines.append("adjacency")
        lines += [format_row(r, EPISODE_DIGITS) for r in snapshot.adjacency]
        path = Path(path)
        path.write_text("\n".join(lines) + "\n")
        return path

    @staticmethod
    def prepare_sample(
        sample: Sample,
        normalizer: FeatureNormalizer,
        d_close: float,
        codec: Optional[CognitiveCodec] = None,
        model: Optional[DbnModel] = None,
        tables: Optional[EdgeTables] = None,
        dbn: Optional[str] = None,
    ) -> PreparedSample:
        """
        Stack per-step graphs over the history window.

        Cognitive tensors are built only when a model is given; `dbn` names it.
        """
        raw = sample.history[:, :, FEATURE_COLUMNS]
        phys_adj = normalize_adjacency(physical_adjacency(raw[:, :, :2], d_close))
        cog_x = cog_a = None
        if model is not None:
            if sample.cognitive is None:
                raise GraphError(f"sample {sample.episode_id}@{sample.start_step} has no cognitive frames")
            rows = codec.to_array(sample.cognitive)
            width = max(spec.cardinality for spec in model.structure.nodes)
            cog_x = one_hot_states(rows, width)
            try:
                cog_a = normalize_adjacency(GraphService.cognitive_adjacency(rows, model, tables))
            except InconsistentEvidenceError as e:
                raise GraphError(f"sample {sample.episode_id}@{sample.start_step}: {e}")
        return PreparedSample(
            key=f"{sample.episode_id}@{sample.start_step}",
            scenario_id=sample.scenario_id,
            phys_features=normalizer.transform(raw),
            phys_adjacency=phys_adj,
            ego_index=sample.ego_index,
            cog_features=cog_x,
            cog_adjacency=cog_a,
            dbn=dbn if model is not None else None,
            origin=np.array(sample.last_ego_xy, dtype=float),
            history_xy=sample.ego_history_xy,
            future_xy=np.asarray(sample.future_xy, dtype=float),
        )

    @staticmethod
    def prepare_episode(
        episode: Episode,
        samples: List[Sample],
        normalizer: FeatureNormalizer,
        d_close: float,
        frames: Optional[List[CognitiveFrame]] = None,
        codec: Optional[CognitiveCodec] = None,
        model: Optional[DbnModel] = None,
        tables: Optional[EdgeTables] = None,
        dbn: Optional[str] = None,
    ) -> List[PreparedSample]:
        """
        prepare_sample for every window of one episode.

        Graphs are built once per step; the prepared samples hold views into those
        per-episode arrays, so overlapping windows share memory.
        """
        ids = episode.vehicle_ids
        raw = np.stack([episode.tracks[vid] for vid in ids], axis=1)[:, :, FEATURE_COLUMNS]
        phys_x = normalizer.transform(raw)
        phys_a = normalize_adjacency(physical_adjacency(raw[:, :, :2], d_close))
        cog_x = cog_a = None
        if model is not None:
            if frames is None:
                raise GraphError(f"episode {episode.episode_id} has no cognitive frames")
            rows = codec.to_array(frames)
            width = max(spec.cardinality for spec in model.structure.nodes)
            cog_x = one_hot_states(rows, width)
            try:
                cog_a = normalize_adjacency(GraphService.cognitive_adjacency(rows, model, tables))
            except InconsistentEvidenceError as e:
                raise GraphError(f"episode {episode.episode_id}: {e}")

        prepared = []
        for sample in samples:
            window = slice(sample.start_step, sample.start_step + sample.history_steps)
            prepared.append(PreparedSample(
                key=f"{sample.episode_id}@{sample.start_step}",
                scenario_id=sample.scenario_id,
                phys_features=phys_x[window],
                phys_adjacency=phys_a[window],
                ego_index=sample.ego_index,
                cog_features=None if cog_x is None else cog_x[window],
                cog_adjacency=None if cog_a is None else cog_a[window],
                dbn=dbn if model is not None else None,
                origin=np.array(sample.last_ego_xy, dtype=float),
                history_xy=sample.ego_history_xy,
                future_xy=np.asarray(sample.future_xy, dtype=float),
            ))
        return prepared
