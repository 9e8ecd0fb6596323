from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

SCHEMA_VERSION = 1
ROW_SUM_TOLERANCE = 1e-12


class Layer(str, Enum):
    STIMULUS = "S"
    ORGANISM = "O"
    RESPONSE = "R"


# Allowed (parent layer, child layer) pairs for intra-slice edges under the SOR prior
SOR_ALLOWED = {
    (Layer.STIMULUS, Layer.ORGANISM),
    (Layer.ORGANISM, Layer.ORGANISM),
    (Layer.ORGANISM, Layer.RESPONSE),
    (Layer.RESPONSE, Layer.RESPONSE),
}


class Prior(str, Enum):
    SOR = "sor"
    NONE = "none"


class Penalty(str, Enum):
    PARAMS = "params"
    NODES = "nodes"


class NodeSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    cardinality: int = Field(ge=1)
    layer: Layer = Layer.ORGANISM
    states: Optional[List[str]] = None

    @model_validator(mode="after")
    def _states_match(self):
        if self.states is not None and len(self.states) != self.cardinality:
            raise ValueError(f"node {self.name}: {len(self.states)} state names for cardinality {self.cardinality}")
        return self

    def state_name(self, index: int) -> str:
        return self.states[index] if self.states else str(index)


def sor_edge_allowed(parent: NodeSpec, child: NodeSpec) -> bool:
    return (parent.layer, child.layer) in SOR_ALLOWED


def topological_order(names: List[str], edges: List[Tuple[str, str]]) -> Optional[List[str]]:
    """Kahn's algorithm with node-list order as tie-break; None when the edges contain a cycle."""
    indegree = {n: 0 for n in names}
    children: Dict[str, List[str]] = {n: [] for n in names}
    for u, v in edges:
        indegree[v] += 1
        children[u].append(v)
    position = {n: i for i, n in enumerate(names)}
    ready = sorted((n for n in names if indegree[n] == 0), key=position.get)
    order = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for child in children[node]:
            indegree[child] -= 1
            if indegree[child] == 0:
                ready.append(child)
        ready.sort(key=position.get)
    return order if len(order) == len(names) else None


class DbnStructure(BaseModel):
    """
    Two-slice DBN graph over discrete nodes.

    intra_edges are (parent, child) pairs inside one slice; inter_edges are self-edges
    node(t-1) -> node(t), stored as (name, name).
    """
    model_config = ConfigDict(frozen=True)

    nodes: List[NodeSpec]
    intra_edges: List[Tuple[str, str]] = []
    inter_edges: List[Tuple[str, str]] = []

    @model_validator(mode="after")
    def _valid_graph(self):
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate node names")
        known = set(names)
        for u, v in self.intra_edges:
            if u not in known or v not in known:
                raise ValueError(f"intra edge {u}->{v} references an unknown node")
            if u == v:
                raise ValueError(f"intra self-loop on {u}")
        if len(set(self.intra_edges)) != len(self.intra_edges):
            raise ValueError("duplicate intra edges")
        if topological_order(names, list(self.intra_edges)) is None:
            raise ValueError("intra edges contain a cycle")
        seen = set()
        for u, v in self.inter_edges:
            if u != v:
                raise ValueError(f"inter edge {u}->{v} is not a self-edge")
            if u not in known:
                raise ValueError(f"inter edge on unknown node {u}")
            if u in seen:
                raise ValueError(f"more than one inter edge on {u}")
            seen.add(u)
        return self

    @property
    def names(self) -> List[str]:
        return [n.name for n in self.nodes]

    def node(self, name: str) -> NodeSpec:
        for spec in self.nodes:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def parents(self, name: str) -> List[str]:
        """Intra parents in node-list order."""
        pa = {u for u, v in self.intra_edges if v == name}
        return [n for n in self.names if n in pa]

    def children(self, name: str) -> List[str]:
        ch = {v for u, v in self.intra_edges if u == name}
        return [n for n in self.names if n in ch]

    def has_inter(self, name: str) -> bool:
        return (name, name) in self.inter_edges

    def topological(self) -> List[str]:
        return topological_order(self.names, list(self.intra_edges))

    def ancestors(self, names: List[str]) -> List[str]:
        """Closure of `names` under the intra parent relation, in node-list order."""
        closed = set(names)
        frontier = list(names)
        while frontier:
            for p in self.parents(frontier.pop()):
                if p not in closed:
                    closed.add(p)
                    frontier.append(p)
        return [n for n in self.names if n in closed]

    def sor_violations(self) -> List[Tuple[str, str]]:
        return [(u, v) for u, v in self.intra_edges if not sor_edge_allowed(self.node(u), self.node(v))]

    def with_edges(self, intra_edges, inter_edges=None) -> "DbnStructure":
        return DbnStructure(
            nodes=self.nodes,
            intra_edges=sorted(intra_edges),
            inter_edges=sorted(self.inter_edges if inter_edges is None else inter_edges),
        )

    def edge_key(self) -> Tuple[Tuple[Tuple[str, str], ...], Tuple[Tuple[str, str], ...]]:
        return tuple(sorted(self.intra_edges)), tuple(sorted(self.inter_edges))


class Cpt(BaseModel):
    """
    Conditional probability table.

    table has one row per parent configuration (first parent most significant, row-major)
    and one column per child state. Transition CPTs list the previous-slice copy of the
    child first, named "<child>@t-1".
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    child: str
    parents: List[str]
    parent_cardinalities: List[int]
    table: np.ndarray

    @model_validator(mode="after")
    def _proper_rows(self):
        rows = int(np.prod(self.parent_cardinalities)) if self.parent_cardinalities else 1
        if len(self.parents) != len(self.parent_cardinalities):
            raise ValueError(f"CPT {self.child}: parent list and cardinalities differ in length")
        if self.table.ndim != 2 or self.table.shape[0] != rows:
            raise ValueError(f"CPT {self.child}: table shape {self.table.shape} does not cover {rows} parent configurations")
        if np.any(self.table < 0) or not np.all(np.isfinite(self.table)):
            raise ValueError(f"CPT {self.child}: negative or non-finite entries")
        worst = float(np.max(np.abs(self.table.sum(axis=1) - 1.0)))
        if worst > ROW_SUM_TOLERANCE:
            raise ValueError(f"CPT {self.child}: row sums deviate from 1 by {worst:.3g}")
        return self

    @property
    def cardinality(self) -> int:
        return self.table.shape[1]

    def row_index(self, parent_states) -> int:
        if not self.parents:
            return 0
        return int(np.ravel_multi_index(tuple(int(s) for s in parent_states), tuple(self.parent_cardinalities)))

    def row(self, parent_states=()) -> np.ndarray:
        return self.table[self.row_index(parent_states)]

    def as_tensor(self) -> np.ndarray:
        """Table reshaped to (card_parent_1, ..., card_parent_k, card_child)."""
        return self.table.reshape(tuple(self.parent_cardinalities) + (self.cardinality,))

    def free_parameters(self) -> int:
        return self.table.shape[0] * (self.cardinality - 1)


def previous(name: str) -> str:
    return f"{name}@t-1"


class DbnModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    structure: DbnStructure
    intra_cpts: Dict[str, Cpt]
    inter_cpts: Dict[str, Cpt] = {}
    sample_count: int = 0
    alpha: float = 0.0

    @model_validator(mode="after")
    def _cpts_match_structure(self):
        s = self.structure
        if set(self.intra_cpts) != set(s.names):
            raise ValueError("intra CPTs must cover every node exactly once")
        for name in s.names:
            cpt = self.intra_cpts[name]
            if cpt.parents != s.parents(name) or cpt.cardinality != s.node(name).cardinality:
                raise ValueError(f"intra CPT of {name} does not match the structure")
        inter_nodes = {u for u, _ in s.inter_edges}
        if set(self.inter_cpts) != inter_nodes:
            raise ValueError("transition CPTs must match the inter edges")
        for name, cpt in self.inter_cpts.items():
            if cpt.parents != [previous(name)] + s.parents(name):
                raise ValueError(f"transition CPT of {name} does not match the structure")
        return self

    def free_parameters(self) -> int:
        return sum(c.free_parameters() for c in self.intra_cpts.values()) + sum(
            c.free_parameters() for c in self.inter_cpts.values()
        )
