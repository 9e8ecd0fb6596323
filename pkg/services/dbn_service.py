"""
Discrete two-slice DBN engine: parameter estimation, likelihood, BIC, exact inference and sampling.

Data is a list of sequences; each sequence is an (T, n_nodes) integer array whose columns
follow `DbnStructure.nodes`. Slice 0 of every sequence is scored with the intra CPTs;
for t >= 1 a node with an inter edge is scored with its transition CPT.
"""
import math
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from schemas.cognitive import CognitiveCodec, CognitiveFrame
from schemas.dbn import Cpt, DbnModel, DbnStructure, Penalty, previous
from utils.errors import DbnError, InconsistentEvidenceError
from utils.logger_factory import new_logger

log = new_logger("dbn_service")


class FrameTable:
    """Stacked view of a dataset: every frame, every slice-0 frame, and consecutive (prev, cur) pairs."""

    def __init__(self, structure: DbnStructure, data: Sequence):
        n = len(structure.nodes)
        seqs = []
        for seq in data:
            arr = np.asarray(seq, dtype=int)
            if arr.size == 0:
                continue
            arr = arr.reshape(-1, n) if arr.ndim == 1 else arr
            if arr.shape[1] != n:
                raise DbnError(f"frames have {arr.shape[1]} columns, structure has {n} nodes")
            seqs.append(arr)
        if not seqs:
            raise DbnError("cannot fit or score a DBN on empty data")

        self.cardinalities = np.array([spec.cardinality for spec in structure.nodes])
        self.frames = np.vstack(seqs)
        bad = (self.frames < 0) | (self.frames >= self.cardinalities)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise DbnError(
                f"state {self.frames[row, col]} out of range for node {structure.nodes[col].name} "
                f"(cardinality {self.cardinalities[col]})"
            )
        self.first = np.vstack([s[:1] for s in seqs])
        self.prev = np.vstack([s[:-1] for s in seqs])
        self.cur = np.vstack([s[1:] for s in seqs])
        self.sequence_count = len(seqs)

    @property
    def m(self) -> int:
        return len(self.frames)


def family_counts(child: np.ndarray, parents: np.ndarray, parent_cards: Sequence[int], card: int) -> np.ndarray:
    """(rows, card) count matrix; rows enumerate parent configurations, first parent most significant."""
    rows = int(np.prod(parent_cards)) if len(parent_cards) else 1
    if len(parent_cards):
        idx = np.ravel_multi_index(tuple(parents.T), tuple(parent_cards))
    else:
        idx = np.zeros(len(child), dtype=int)
    return np.bincount(idx * card + child, minlength=rows * card).reshape(rows, card).astype(float)


def normalize_counts(counts: np.ndarray, alpha: float) -> np.ndarray:
    """(count + alpha) / (total + alpha * card); rows with no mass become uniform."""
    card = counts.shape[1]
    totals = counts.sum(axis=1, keepdims=True) + alpha * card
    safe = np.where(totals > 0, totals, 1.0)
    return np.where(totals > 0, (counts + alpha) / safe, 1.0 / card)


def counts_log_likelihood(counts: np.ndarray, table: np.ndarray) -> float:
    """sum(count * ln p); -inf when an observed event has probability 0."""
    observed = counts > 0
    if np.any(table[observed] <= 0.0):
        return -math.inf
    return float(np.sum(counts[observed] * np.log(table[observed])))


def intra_family(table: FrameTable, structure: DbnStructure, name: str, rows: np.ndarray) -> np.ndarray:
    j = structure.index(name)
    cols = [structure.index(p) for p in structure.parents(name)]
    cards = [int(table.cardinalities[c]) for c in cols]
    return family_counts(rows[:, j], rows[:, cols], cards, int(table.cardinalities[j]))


def transition_family(table: FrameTable, structure: DbnStructure, name: str) -> np.ndarray:
    j = structure.index(name)
    cols = [structure.index(p) for p in structure.parents(name)]
    parents = np.column_stack([table.prev[:, j]] + [table.cur[:, c] for c in cols]) if len(table.prev) else \
        np.zeros((0, 1 + len(cols)), dtype=int)
    cards = [int(table.cardinalities[j])] + [int(table.cardinalities[c]) for c in cols]
    return family_counts(table.cur[:, j], parents, cards, int(table.cardinalities[j]))


def bic(log_likelihood: float, penalty_count: int, m: int) -> float:
    """log_likelihood - 0.5 * penalty_count * ln(m)."""
    return log_likelihood - 0.5 * penalty_count * math.log(m)


class DbnService:
    """Fit, score, query and sample discrete two-slice DBNs."""

    @staticmethod
    def mle_fit(structure: DbnStructure, data: Sequence, alpha: float = 0.0) -> DbnModel:
        """
        Maximum-likelihood CPTs with additive smoothing.

        Intra CPTs count every frame; transition CPTs count consecutive frame pairs.
        With alpha = 0 an unseen parent configuration gets a uniform row.

        Args:
            structure: Graph to parametrize
            data: Sequences of state rows
            alpha: Pseudo-count added to every cell

        Returns:
            DbnModel with sample_count = number of frames
        """
        if alpha < 0:
            raise DbnError(f"alpha must be non-negative, got {alpha}")
        start = time.time()
        table = FrameTable(structure, data)
        intra, inter = {}, {}
        for spec in structure.nodes:
            name = spec.name
            parents = structure.parents(name)
            cards = [structure.node(p).cardinality for p in parents]
            counts = intra_family(table, structure, name, table.frames)
            intra[name] = Cpt(child=name, parents=parents, parent_cardinalities=cards,
                              table=normalize_counts(counts, alpha))
            if structure.has_inter(name):
                counts = transition_family(table, structure, name)
                inter[name] = Cpt(child=name, parents=[previous(name)] + parents,
                                  parent_cardinalities=[spec.cardinality] + cards,
                                  table=normalize_counts(counts, alpha))
        log.debug(f"Fitted {len(intra)} intra and {len(inter)} transition CPTs on {table.m} frames "
                  f"in {(time.time() - start) * 1000:.2f}ms")
        return DbnModel(structure=structure, intra_cpts=intra, inter_cpts=inter, sample_count=table.m, alpha=alpha)

    @staticmethod
    def log_likelihood(model: DbnModel, data: Sequence) -> float:
        """Natural-log likelihood of every sequence under the two-slice factorization."""
        s = model.structure
        table = FrameTable(s, data)
        total = 0.0
        for name in s.names:
            if s.has_inter(name):
                total += counts_log_likelihood(intra_family(table, s, name, table.first), model.intra_cpts[name].table)
                total += counts_log_likelihood(transition_family(table, s, name), model.inter_cpts[name].table)
            else:
                total += counts_log_likelihood(intra_family(table, s, name, table.frames), model.intra_cpts[name].table)
        if total == -math.inf:
            log.warning("Data contains an event with zero probability under the model, log-likelihood is -inf")
        return total

    @staticmethod
    def penalty_count(model: DbnModel, penalty: Penalty = Penalty.PARAMS) -> int:
        return model.free_parameters() if penalty == Penalty.PARAMS else len(model.structure.nodes)

    @staticmethod
    def bic_score(model: DbnModel, data: Sequence, penalty: Penalty = Penalty.PARAMS) -> float:
        """BIC with m = number of frames in `data`; higher is better."""
        m = FrameTable(model.structure, data).m
        return bic(DbnService.log_likelihood(model, data), DbnService.penalty_count(model, penalty), m)

    @staticmethod
    def joint(model: DbnModel, targets: List[str], evidence: Optional[Dict[str, int]] = None) -> np.ndarray:
        """
        Normalized slice distribution over `targets` given `evidence`, as a tensor with one
        axis per target.

        Only the ancestral closure of targets and evidence is contracted; everything
        below it sums to one.
        """
        s = model.structure
        evidence = dict(evidence or {})
        for name, state in evidence.items():
            if name not in s.names:
                raise DbnError(f"unknown evidence node {name}")
            if not 0 <= int(state) < s.node(name).cardinality:
                raise DbnError(f"evidence state {state} out of range for node {name}")
        for name in targets:
            if name not in s.names:
                raise DbnError(f"unknown query node {name}")
            if name in evidence:
                raise DbnError(f"query node {name} is also evidence")

        closure = s.ancestors(list(targets) + list(evidence))
        axis = {name: i for i, name in enumerate(closure)}
        operands = []
        for name in closure:
            cpt = model.intra_cpts[name]
            operands += [cpt.as_tensor(), [axis[p] for p in cpt.parents] + [axis[name]]]
            if name in evidence:
                one_hot = np.zeros(cpt.cardinality)
                one_hot[int(evidence[name])] = 1.0
                operands += [one_hot, [axis[name]]]
        result = np.einsum(*operands, [axis[t] for t in targets], optimize=True)
        mass = float(result.sum())
        if mass <= 0.0:
            raise InconsistentEvidenceError(f"inconsistent evidence {evidence}: zero marginal probability")
        return result / mass

    @staticmethod
    def infer_conditional(model: DbnModel, query: str, evidence: Optional[Dict[str, int]] = None) -> np.ndarray:
        """Exact P(query | evidence) within one slice."""
        return DbnService.joint(model, [query], evidence)

    @staticmethod
    def transition_query(
        model: DbnModel,
        node: str,
        prev_state: int,
        parent_states: Optional[Dict[str, int]] = None,
    ) -> np.ndarray:
        """
        P(node_t | node_{t-1} = prev_state).

        Within-slice parents are read from `parent_states` when given, otherwise
        marginalized under the slice distribution.
        """
        if node not in model.inter_cpts:
            raise DbnError(f"node {node} has no inter edge")
        cpt = model.inter_cpts[node]
        if not 0 <= int(prev_state) < cpt.cardinality:
            raise DbnError(f"previous state {prev_state} out of range for node {node}")
        parents = cpt.parents[1:]
        tensor = cpt.as_tensor()[int(prev_state)]
        if not parents:
            return tensor.copy()
        if parent_states is not None:
            return tensor[tuple(int(parent_states[p]) for p in parents)].copy()
        weights = DbnService.joint(model, parents)
        return np.tensordot(weights, tensor, axes=len(parents))

    @staticmethod
    def sample_conditioned(model: DbnModel, fixed: np.ndarray, seed: int) -> np.ndarray:
        """
        Ancestral sampling that keeps every entry of `fixed` that is >= 0.

        Free entries are drawn in topological order from the intra CPT (slice 0) or the
        transition CPT (t >= 1). This is exact conditioning when fixed nodes have no free
        ancestors, which holds for stimulus nodes under the SOR prior.
        """
        s = model.structure
        fixed = np.asarray(fixed, dtype=int)
        horizon = len(fixed)
        out = fixed.copy().reshape(horizon, len(s.nodes))
        rng = np.random.default_rng(seed)
        order = [(s.index(n), n) for n in s.topological()]
        intra_cum = {n: np.cumsum(c.table, axis=1) for n, c in model.intra_cpts.items()}
        inter_cum = {n: np.cumsum(c.table, axis=1) for n, c in model.inter_cpts.items()}
        parent_cols = {n: [s.index(p) for p in s.parents(n)] for n in s.names}

        for t in range(horizon):
            for j, name in order:
                if out[t, j] >= 0:
                    continue
                pa = out[t, parent_cols[name]]
                if t > 0 and name in inter_cum:
                    cpt, cum = model.inter_cpts[name], inter_cum[name]
                    row = cpt.row_index([out[t - 1, j]] + list(pa))
                else:
                    cpt, cum = model.intra_cpts[name], intra_cum[name]
                    row = cpt.row_index(pa)
                state = int(np.searchsorted(cum[row], rng.random(), side="right"))
                out[t, j] = min(state, cpt.cardinality - 1)
        return out

    @staticmethod
    def sample(model: DbnModel, horizon: int, seed: int) -> np.ndarray:
        """(horizon, n_nodes) state rows drawn from the two-slice joint; deterministic per seed."""
        if horizon < 0:
            raise DbnError(f"horizon must be non-negative, got {horizon}")
        fixed = -np.ones((horizon, len(model.structure.nodes)), dtype=int)
        return DbnService.sample_conditioned(model, fixed, seed)

    @staticmethod
    def sample_frames(model: DbnModel, horizon: int, seed: int, codec: CognitiveCodec) -> List[CognitiveFrame]:
        DbnService.check_codec(model, codec)
        return [codec.from_row(row) for row in DbnService.sample(model, horizon, seed)]

    @staticmethod
    def check_codec(model: DbnModel, codec: CognitiveCodec) -> None:
        expected = [(spec.name, spec.cardinality) for spec in codec.node_specs()]
        actual = [(spec.name, spec.cardinality) for spec in model.structure.nodes]
        if expected != actual:
            raise DbnError(f"model nodes {actual} do not match the cognitive node set {expected}")

    @staticmethod
    def frames_to_sequences(
        frames: Dict[str, List[CognitiveFrame]], codec: CognitiveCodec
    ) -> Tuple[List[str], List[np.ndarray]]:
        """Episode ids (sorted) and their state-row sequences."""
        ids = sorted(frames)
        return ids, [codec.to_array(frames[i]) for i in ids]
