"""
Greedy BIC hill climbing over two-slice DBN structures with optional SOR layer prior.
"""
import math
import time
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from schemas.dbn import DbnModel, DbnStructure, NodeSpec, Penalty, Prior, sor_edge_allowed
from services.dbn_service import (
    DbnService, FrameTable, counts_log_likelihood, family_counts, normalize_counts,
)
from utils.logger_factory import new_logger
from utils.number_format import MODEL_DIGITS

log = new_logger("structure_search_service")

IMPROVEMENT_TOLERANCE = 1e-9

# Lexicographic tie-break order of move kinds
MOVE_KINDS = ("add", "delete", "reverse", "add_inter", "delete_inter")


class SearchStep(BaseModel):
    """One accepted move (or a restart's start) in the BIC log."""
    model_config = ConfigDict(frozen=True)

    restart: int
    iteration: int
    operation: str
    edge: str
    log_likelihood: float
    free_parameters: int
    bic_params: float
    bic_nodes: float


class SearchResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    model: DbnModel
    score: float
    restart: int
    steps: List[SearchStep]


class FamilyScorer:
    """
    Cached decomposable score terms.

    A family is (node, parents, has_inter); its term is the log-likelihood contribution
    and free-parameter count of that node's CPTs, exactly as DbnService scores the fitted model.
    """

    def __init__(self, nodes: List[NodeSpec], data: Sequence, alpha: float):
        self.structure = DbnStructure(nodes=nodes)
        self.table = FrameTable(self.structure, data)
        self.alpha = alpha
        self.index = {spec.name: i for i, spec in enumerate(nodes)}
        self.cards = [spec.cardinality for spec in nodes]
        self._cache: Dict[Tuple[str, Tuple[str, ...], bool], Tuple[float, int]] = {}

    @property
    def m(self) -> int:
        return self.table.m

    def family(self, name: str, parents: Tuple[str, ...], inter: bool) -> Tuple[float, int]:
        key = (name, parents, inter)
        if key not in self._cache:
            self._cache[key] = self._score(name, parents, inter)
        return self._cache[key]

    def _score(self, name: str, parents: Tuple[str, ...], inter: bool) -> Tuple[float, int]:
        j = self.index[name]
        cols = [self.index[p] for p in parents]
        cards = [self.cards[c] for c in cols]
        card = self.cards[j]
        t = self.table
        fitted = normalize_counts(family_counts(t.frames[:, j], t.frames[:, cols], cards, card), self.alpha)
        params = fitted.shape[0] * (card - 1)
        if not inter:
            ll = counts_log_likelihood(family_counts(t.frames[:, j], t.frames[:, cols], cards, card), fitted)
            return ll, params
        ll = counts_log_likelihood(family_counts(t.first[:, j], t.first[:, cols], cards, card), fitted)
        pair_parents = np.column_stack([t.prev[:, j]] + [t.cur[:, c] for c in cols])
        pair_counts = family_counts(t.cur[:, j], pair_parents.astype(int), [card] + cards, card)
        ll += counts_log_likelihood(pair_counts, normalize_counts(pair_counts, self.alpha))
        return ll, params + pair_counts.shape[0] * (card - 1)


class SearchState:
    """Mutable parent sets plus running totals of the decomposed score."""

    def __init__(self, scorer: FamilyScorer, names: List[str], parents: Dict[str, Set[str]], inter: Set[str]):
        self.scorer = scorer
        self.names = names
        self.order = {n: i for i, n in enumerate(names)}
        self.parents = {n: set(parents.get(n, ())) for n in names}
        self.inter = set(inter)

    def key(self, name: str, parents: Optional[Set[str]] = None) -> Tuple[str, ...]:
        return tuple(sorted(self.parents[name] if parents is None else parents, key=self.order.get))

    def term(self, name: str, parents: Optional[Set[str]] = None, inter: Optional[bool] = None) -> Tuple[float, int]:
        inter = (name in self.inter) if inter is None else inter
        return self.scorer.family(name, self.key(name, parents), inter)

    def totals(self) -> Tuple[float, int]:
        ll, params = 0.0, 0
        for n in self.names:
            a, b = self.term(n)
            ll += a
            params += b
        return ll, params

    def reaches(self, source: str, target: str) -> bool:
        """True when a directed intra path source -> ... -> target exists."""
        children: Dict[str, List[str]] = {n: [] for n in self.names}
        for child, pa in self.parents.items():
            for p in pa:
                children[p].append(child)
        seen, stack = {source}, [source]
        while stack:
            node = stack.pop()
            if node == target:
                return True
            for c in children[node]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return False

    def structure(self, nodes: List[NodeSpec]) -> DbnStructure:
        edges = [(p, c) for c in self.names for p in self.parents[c]]
        return DbnStructure(nodes=nodes, intra_edges=sorted(edges), inter_edges=sorted((n, n) for n in self.inter))


def _penalized(ll: float, params: int, m: int, penalty: Penalty, node_count: int) -> float:
    count = params if penalty == Penalty.PARAMS else node_count
    return ll - 0.5 * count * math.log(m)


class StructureSearchService:
    """Hill climbing with add/delete/reverse intra moves and add/delete inter self-edges."""

    @staticmethod
    def edge_allowed(prior: Prior, parent: NodeSpec, child: NodeSpec) -> bool:
        return prior == Prior.NONE or sor_edge_allowed(parent, child)

    @staticmethod
    def random_start(
        nodes: List[NodeSpec],
        prior: Prior,
        rng: np.random.Generator,
        edge_probability: float,
        search_inter: bool,
        max_parents: int,
    ) -> Tuple[Dict[str, Set[str]], Set[str]]:
        """Random legal structure: edges only go forward along a random permutation."""
        names = [n.name for n in nodes]
        spec = {n.name: n for n in nodes}
        perm = [names[i] for i in rng.permutation(len(names))]
        parents: Dict[str, Set[str]] = {n: set() for n in names}
        for i, u in enumerate(perm):
            for v in perm[i + 1:]:
                draw = rng.random()
                if (draw < edge_probability and len(parents[v]) < max_parents
                        and StructureSearchService.edge_allowed(prior, spec[u], spec[v])):
                    parents[v].add(u)
        inter = {n for n in names if rng.random() < edge_probability} if search_inter else set()
        return parents, inter

    @staticmethod
    def _candidates(state: SearchState, spec: Dict[str, NodeSpec], prior: Prior, search_inter: bool,
                    max_parents: int):
        names = state.names
        for u in names:
            for v in names:
                if u == v or u in state.parents[v]:
                    continue
                if len(state.parents[v]) >= max_parents:
                    continue
                if not StructureSearchService.edge_allowed(prior, spec[u], spec[v]):
                    continue
                if state.reaches(v, u):
                    continue
                yield "add", u, v
        for v in names:
            for u in sorted(state.parents[v], key=state.order.get):
                yield "delete", u, v
        for v in names:
            for u in sorted(state.parents[v], key=state.order.get):
                if len(state.parents[u]) >= max_parents:
                    continue
                if not StructureSearchService.edge_allowed(prior, spec[v], spec[u]):
                    continue
                state.parents[v].discard(u)
                cyclic = state.reaches(u, v)
                state.parents[v].add(u)
                if not cyclic:
                    yield "reverse", u, v
        if search_inter:
            for v in names:
                yield ("delete_inter" if v in state.inter else "add_inter"), v, v

    @staticmethod
    def _delta(state: SearchState, kind: str, u: str, v: str, m: int, penalty: Penalty) -> Tuple[float, float, int]:
        """(score change, log-likelihood change, parameter change) of one move."""
        before_v = state.term(v)
        if kind == "add":
            after = [state.term(v, state.parents[v] | {u})]
            before = [before_v]
        elif kind == "delete":
            after = [state.term(v, state.parents[v] - {u})]
            before = [before_v]
        elif kind == "reverse":
            after = [state.term(v, state.parents[v] - {u}), state.term(u, state.parents[u] | {v})]
            before = [before_v, state.term(u)]
        else:
            after = [state.term(v, inter=(kind == "add_inter"))]
            before = [before_v]
        d_ll = sum(a[0] for a in after) - sum(b[0] for b in before)
        d_params = sum(a[1] for a in after) - sum(b[1] for b in before)
        if not math.isfinite(d_ll):
            return -math.inf, d_ll, d_params
        d_score = d_ll - (0.5 * d_params * math.log(m) if penalty == Penalty.PARAMS else 0.0)
        return d_score, d_ll, d_params

    @staticmethod
    def _apply(state: SearchState, kind: str, u: str, v: str) -> None:
        if kind == "add":
            state.parents[v].add(u)
        elif kind == "delete":
            state.parents[v].discard(u)
        elif kind == "reverse":
            state.parents[v].discard(u)
            state.parents[u].add(v)
        elif kind == "add_inter":
            state.inter.add(v)
        else:
            state.inter.discard(v)

    @staticmethod
    def _climb(
        scorer: FamilyScorer,
        nodes: List[NodeSpec],
        state: SearchState,
        restart: int,
        prior: Prior,
        penalty: Penalty,
        search_inter: bool,
        max_iterations: int,
        max_parents: int,
    ) -> Tuple[SearchState, float, List[SearchStep]]:
        spec = {n.name: n for n in nodes}
        m, count = scorer.m, len(nodes)
        ll, params = state.totals()

        def record(iteration: int, operation: str, edge: str) -> SearchStep:
            return SearchStep(
                restart=restart, iteration=iteration, operation=operation, edge=edge,
                log_likelihood=ll, free_parameters=params,
                bic_params=_penalized(ll, params, m, Penalty.PARAMS, count),
                bic_nodes=_penalized(ll, params, m, Penalty.NODES, count),
            )

        steps = [record(0, "start", "")]
        for iteration in range(1, max_iterations + 1):
            best = None
            for kind, u, v in StructureSearchService._candidates(state, spec, prior, search_inter, max_parents):
                d_score, d_ll, d_params = StructureSearchService._delta(state, kind, u, v, m, penalty)
                if d_score > IMPROVEMENT_TOLERANCE and (best is None or d_score > best[0]):
                    best = (d_score, d_ll, d_params, kind, u, v)
            if best is None:
                break
            _, d_ll, d_params, kind, u, v = best
            StructureSearchService._apply(state, kind, u, v)
            ll, params = state.totals()
            steps.append(record(iteration, kind, f"{u}->{v}"))
        return state, _penalized(ll, params, m, penalty, count), steps

    @staticmethod
    def search(
        nodes: List[NodeSpec],
        data: Sequence,
        prior: Prior = Prior.SOR,
        seed: int = 0,
        restarts: int = 8,
        penalty: Penalty = Penalty.PARAMS,
        alpha: float = 0.0,
        search_inter: bool = True,
        start_edge_probability: float = 0.2,
        max_iterations: int = 500,
        max_parents: int = 4,
    ) -> SearchResult:
        """
        Best-improvement hill climbing from `restarts` starting points.

        Restart 0 starts from the empty graph, the others from random legal graphs drawn
        with generators spawned from `seed`. Among equal deltas the first move in
        (kind, parent, child) order wins; among equal final scores the lowest restart wins.

        Args:
            nodes: Node specs in column order of the data
            data: Sequences of state rows
            prior: SOR layer prior or none (acyclicity only)
            seed: Seed for the random restarts
            restarts: Number of starting points
            penalty: BIC penalty mode that guides the search

        Returns:
            SearchResult with the fitted best model and the log of every accepted move
        """
        start = time.time()
        scorer = FamilyScorer(nodes, data, alpha)
        names = [n.name for n in nodes]
        streams = np.random.SeedSequence(seed).spawn(restarts)

        best: Optional[Tuple[float, int, SearchState]] = None
        all_steps: List[SearchStep] = []
        for r in range(restarts):
            if r == 0:
                parents, inter = {n: set() for n in names}, set()
            else:
                parents, inter = StructureSearchService.random_start(
                    nodes, prior, np.random.default_rng(streams[r]), start_edge_probability,
                    search_inter, max_parents,
                )
            state = SearchState(scorer, names, parents, inter)
            state, score, steps = StructureSearchService._climb(
                scorer, nodes, state, r, prior, penalty, search_inter, max_iterations, max_parents,
            )
            all_steps.extend(steps)
            log.debug(f"Restart {r} finished after {len(steps) - 1} moves with score {score:.6f}")
            if best is None or score > best[0] + IMPROVEMENT_TOLERANCE:
                best = (score, r, state)

        score, restart, state = best
        structure = state.structure(nodes)
        model = DbnService.mle_fit(structure, data, alpha=alpha)
        log.info(
            f"Structure search ({prior.value}, {penalty.value}) kept restart {restart} with "
            f"{len(structure.intra_edges)} intra and {len(structure.inter_edges)} inter edges, "
            f"score {score:.4f}, took {(time.time() - start) * 1000:.2f}ms"
        )
        return SearchResult(model=model, score=score, restart=restart, steps=all_steps)

    @staticmethod
    def hill_climb(nodes: List[NodeSpec], data: Sequence, prior: Prior = Prior.SOR, seed: int = 0,
                   restarts: int = 8, **options) -> DbnModel:
        return StructureSearchService.search(nodes, data, prior=prior, seed=seed, restarts=restarts, **options).model

    @staticmethod
    def structure_score(nodes: List[NodeSpec], data: Sequence, structure: DbnStructure,
                        penalty: Penalty = Penalty.PARAMS, alpha: float = 0.0) -> float:
        """Score of a fixed structure through the same cached terms the search uses."""
        scorer = FamilyScorer(nodes, data, alpha)
        parents = {n: set(structure.parents(n)) for n in structure.names}
        state = SearchState(scorer, structure.names, parents, {u for u, _ in structure.inter_edges})
        ll, params = state.totals()
        return _penalized(ll, params, scorer.m, penalty, len(nodes))

    @staticmethod
    def write_log(steps: List[SearchStep], path) -> Path:
        """BIC log with both penalty columns, one row per accepted move."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame([s.model_dump() for s in steps], columns=list(SearchStep.model_fields))
        frame.to_csv(path, index=False, float_format=f"%.{MODEL_DIGITS}g", lineterminator="\n")
        return path


def structural_hamming_distance(a: DbnStructure, b: DbnStructure) -> int:
    """
    Edge insertions, deletions and reversals needed to turn the intra graph of `a` into `b`;
    a reversed edge counts once.
    """
    ea, eb = set(a.intra_edges), set(b.intra_edges)
    skeleton_a = {frozenset(e) for e in ea}
    skeleton_b = {frozenset(e) for e in eb}
    reversed_count = sum(1 for u, v in ea if (v, u) in eb)
    return len(skeleton_a ^ skeleton_b) + reversed_count


def skeleton(structure: DbnStructure) -> Set[FrozenSet[str]]:
    return {frozenset(e) for e in structure.intra_edges}
