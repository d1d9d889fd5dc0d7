from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional

import networkx as nx
import numpy as np

Pair = tuple[int, int]


@dataclass(frozen=True)
class ConnectivityGraph:
    """Users 0..n-1; edges (i, j) unordered, every self-loop present."""

    num_users: int
    edges: frozenset[frozenset[int]]

    def connected(self, i: int, j: int) -> bool:
        return i == j or frozenset((i, j)) in self.edges

    def neighbours(self, i: int) -> list[int]:
        return [j for j in range(self.num_users) if j != i and self.connected(i, j)]

    @property
    def max_degree(self) -> int:
        return max((len(self.neighbours(i)) for i in range(self.num_users)), default=0)


@dataclass(frozen=True)
class ConflictGraph:
    """Graph over ordered pairs (i, j), i != j."""

    graph: nx.Graph
    vertices: tuple[Hashable, ...]

    def index(self) -> dict[Hashable, int]:
        return {v: k for k, v in enumerate(self.vertices)}

    def adjacency(self) -> np.ndarray:
        """Dense boolean adjacency in `vertices` order."""
        return nx.to_numpy_array(self.graph, nodelist=list(self.vertices), dtype=bool, weight=None)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @classmethod
    def from_edges(cls, vertices: Iterable[Hashable], edges: Iterable[tuple[Hashable, Hashable]]) -> "ConflictGraph":
        g = nx.Graph()
        vertices = tuple(vertices)
        g.add_nodes_from(vertices)
        g.add_edges_from(edges)
        return cls(graph=g, vertices=vertices)


@dataclass(frozen=True)
class ChordalCompletion:
    base: ConflictGraph
    added_edges: frozenset[frozenset[Hashable]]
    elimination_order: tuple[Hashable, ...]
    graph: nx.Graph = field(repr=False)


@dataclass(frozen=True)
class CliqueList:
    cliques: tuple[frozenset[Hashable], ...]

    def __len__(self) -> int:
        return len(self.cliques)

    def __iter__(self):
        return iter(self.cliques)

    def containing(self, vertex: Hashable) -> list[int]:
        return [k for k, q in enumerate(self.cliques) if vertex in q]


@dataclass(frozen=True)
class LoadVector:
    """Arrival rate beta and availability p per conflict vertex."""

    beta: dict[Hashable, float]
    availability: dict[Hashable, float]

    def __post_init__(self):
        for v, b in self.beta.items():
            if b < 0 or not np.isfinite(float(b)):
                raise ValueError(f"load on {v} must be finite and non-negative")
        for v, p in self.availability.items():
            if not 0 < float(p) <= 1:
                raise ValueError(f"availability on {v} must lie in (0, 1]")

    def p(self, v: Hashable) -> float:
        return self.availability.get(v, 1)


@dataclass(frozen=True)
class StabilityReport:
    """Clique loads on the chordal completion and the two membership verdicts."""

    completion: ChordalCompletion
    cliques: CliqueList
    clique_loads: tuple[float, ...]
    clique_within: tuple[bool, ...]
    chordal: bool
    inner_bound: bool
    brute_force: Optional[bool] = None

    @property
    def consistent(self) -> bool:
        """The inner bound never admits a load outside the stability region."""
        return not (self.inner_bound and self.brute_force is False)
