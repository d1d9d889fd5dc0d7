"""
Conflict Service: connectivity and conflict graphs, chordal completion,
maximal cliques and the relay-queue stability region checks.
"""

from __future__ import annotations

import itertools
import logging
from fractions import Fraction
from typing import Hashable, Iterable, Sequence

import networkx as nx
import numpy as np

from app.core.exceptions import BruteForceLimitError, ConfigError, NotChordalError
from app.models import ChordalCompletion, CliqueList, ConflictGraph, ConnectivityGraph, LoadVector, StabilityReport
from app.schemas.conflict import CliqueReport, StabilityCheckRequest, StabilityCheckResponse

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_VERTICES = 12
FLOAT_BOUNDARY_TOL = 1e-12


def build_connectivity(phi: np.ndarray, theta: float) -> ConnectivityGraph:
    """Edge (i, j) iff i == j or phi_ij > theta."""
    phi = np.asarray(phi, dtype=float)
    n = phi.shape[0]
    edges = {frozenset((i,)) for i in range(n)}
    for i in range(n):
        for j in range(i + 1, n):
            if phi[i, j] > theta:
                edges.add(frozenset((i, j)))
    return ConnectivityGraph(num_users=n, edges=frozenset(edges))


def connectivity_matrix(G: ConnectivityGraph) -> np.ndarray:
    E = np.eye(G.num_users, dtype=bool)
    for e in G.edges:
        if len(e) == 2:
            i, j = tuple(e)
            E[i, j] = E[j, i] = True
    return E


def conflict_vertices(n: int) -> list[tuple[int, int]]:
    """Ordered pairs (i, j), i != j, in lexicographic order."""
    return [(i, j) for i in range(n) for j in range(n) if i != j]


def build_conflict(G: ConnectivityGraph) -> ConflictGraph:
    """(i, j) -- (k, l) iff they differ and ((i, l) in E or (j, k) in E)."""
    E = connectivity_matrix(G)
    vertices = conflict_vertices(G.num_users)
    if not vertices:
        return ConflictGraph.from_edges([], [])
    I = np.array([v[0] for v in vertices])
    J = np.array([v[1] for v in vertices])
    adj = E[I[:, None], J[None, :]] | E[J[:, None], I[None, :]]
    np.fill_diagonal(adj, False)
    rows, cols = np.nonzero(np.triu(adj, 1))
    return ConflictGraph.from_edges(vertices, ((vertices[a], vertices[b]) for a, b in zip(rows, cols)))


def _as_graph(G) -> nx.Graph:
    if isinstance(G, ChordalCompletion):
        return G.graph
    if isinstance(G, ConflictGraph):
        return G.graph
    return G


def chordalize(Gc) -> ChordalCompletion:
    """
    Elimination game along a minimum-degree ordering: eliminating a vertex
    connects all its not-yet-eliminated neighbours. Ties go to the vertex
    listed first.
    """
    base = Gc if isinstance(Gc, ConflictGraph) else ConflictGraph(graph=Gc, vertices=tuple(Gc.nodes))
    position = {v: k for k, v in enumerate(base.vertices)}
    adj = {v: set(base.graph.neighbors(v)) for v in base.vertices}
    remaining = set(base.vertices)
    order = []
    added: set[frozenset] = set()
    while remaining:
        v = min(remaining, key=lambda u: (len(adj[u]), position[u]))
        nbrs = adj[v]
        for u in nbrs:
            missing = nbrs - adj[u] - {u}
            for w in missing:
                added.add(frozenset((u, w)))
            adj[u] |= nbrs - {u}
            adj[u].discard(v)
        remaining.discard(v)
        order.append(v)
        del adj[v]

    filled = nx.Graph()
    filled.add_nodes_from(base.vertices)
    filled.add_edges_from(base.graph.edges)
    filled.add_edges_from(tuple(e) for e in added)
    return ChordalCompletion(base=base, added_edges=frozenset(added), elimination_order=tuple(order), graph=filled)


def maximum_cardinality_search(G) -> list[Hashable]:
    """Visit order of MCS; its reverse is a perfect elimination order iff G is chordal."""
    G = _as_graph(G)
    weight = {v: 0 for v in G.nodes}
    visited = []
    done = set()
    unvisited = list(G.nodes)
    while unvisited:
        v = max(unvisited, key=lambda u: weight[u])
        unvisited.remove(v)
        visited.append(v)
        done.add(v)
        for u in G.neighbors(v):
            if u not in done:
                weight[u] += 1
    return visited


def is_perfect_elimination_order(G, order: Sequence[Hashable]) -> bool:
    G = _as_graph(G)
    position = {v: k for k, v in enumerate(order)}
    if len(position) != G.number_of_nodes():
        return False
    for v in order:
        later = [u for u in G.neighbors(v) if position[u] > position[v]]
        if len(later) < 2:
            continue
        first = min(later, key=position.__getitem__)
        nbrs_first = set(G.neighbors(first))
        if any(u != first and u not in nbrs_first for u in later):
            return False
    return True


def verify_chordal(G) -> bool:
    """True iff a perfect elimination ordering exists (MCS + simpliciality check)."""
    G = _as_graph(G)
    order = list(reversed(maximum_cardinality_search(G)))
    return is_perfect_elimination_order(G, order)


def maximal_cliques(completion) -> CliqueList:
    """
    Cliques {v} + later neighbours along a perfect elimination order, keeping
    C_v unless some u with parent(u) = v has |later(u)| = |later(v)| + 1.
    """
    if isinstance(completion, ChordalCompletion):
        graph = completion.graph
        order = list(completion.elimination_order)
    else:
        graph = _as_graph(completion)
        order = []
    if not order or not is_perfect_elimination_order(graph, order):
        if not verify_chordal(graph):
            raise NotChordalError("maximal clique listing needs a chordal graph")
        order = list(reversed(maximum_cardinality_search(graph)))

    position = {v: k for k, v in enumerate(order)}
    later = {v: [u for u in graph.neighbors(v) if position[u] > position[v]] for v in order}
    dominated = set()
    for u in order:
        if later[u]:
            parent = min(later[u], key=position.__getitem__)
            if len(later[u]) == len(later[parent]) + 1:
                dominated.add(parent)
    cliques = tuple(frozenset([v, *later[v]]) for v in order if v not in dominated)
    return CliqueList(cliques=cliques)


def clique_load(load: LoadVector, Q: Iterable[Hashable]):
    """beta_Q = sum over (i, j) in Q of beta_ij / p_ij.

    Exact (a Fraction) when every beta and p in Q is an int or Fraction.
    """
    total = Fraction(0)
    for v in Q:
        b, p = load.beta.get(v, 0), load.p(v)
        if isinstance(b, (int, Fraction)) and isinstance(p, (int, Fraction)):
            total += Fraction(b) / Fraction(p)
        else:
            total = float(total) + float(b) / float(p)
    return total


def _within(value) -> bool:
    if isinstance(value, (int, Fraction)):
        return value <= 1
    return float(value) <= 1 + FLOAT_BOUNDARY_TOL


def inner_bound_member(load: LoadVector, cliques: CliqueList) -> bool:
    return all(_within(clique_load(load, Q)) for Q in cliques)


def independent_sets(G, maximal_only: bool = False) -> list[frozenset]:
    """All independent sets by bitmask enumeration (small graphs only)."""
    G = _as_graph(G)
    nodes = list(G.nodes)
    idx = {v: k for k, v in enumerate(nodes)}
    nbr_mask = [0] * len(nodes)
    for a, b in G.edges:
        nbr_mask[idx[a]] |= 1 << idx[b]
        nbr_mask[idx[b]] |= 1 << idx[a]
    masks = []
    for mask in range(1 << len(nodes)):
        ok = True
        m = mask
        while m:
            low = m & -m
            k = low.bit_length() - 1
            if nbr_mask[k] & mask:
                ok = False
                break
            m ^= low
        if ok:
            masks.append(mask)
    if maximal_only:
        blocked = []
        for mask in masks:
            cover = mask
            m = mask
            while m:
                low = m & -m
                cover |= nbr_mask[low.bit_length() - 1]
                m ^= low
            if cover == (1 << len(nodes)) - 1:
                blocked.append(mask)
        masks = blocked
    return [frozenset(nodes[k] for k in range(len(nodes)) if mask >> k & 1) for mask in masks]


def rational_simplex_max(c: Sequence[Fraction], A: Sequence[Sequence[int]], b: Sequence[Fraction]) -> Fraction:
    """
    max c^T y s.t. A y <= b, y >= 0 with b >= 0, in exact arithmetic.
    Dense tableau, Bland's rule. The problem must be bounded.
    """
    m, n = len(A), len(c)
    width = n + m + 1
    rows = []
    for i in range(m):
        row = [Fraction(a) for a in A[i]] + [Fraction(0)] * m + [Fraction(b[i])]
        row[n + i] = Fraction(1)
        rows.append(row)
    objective = [-Fraction(x) for x in c] + [Fraction(0)] * (m + 1)
    basis = [n + i for i in range(m)]

    while True:
        entering = next((j for j in range(width - 1) if objective[j] < 0), None)
        if entering is None:
            return objective[-1]
        best, leaving = None, None
        for i in range(m):
            coef = rows[i][entering]
            if coef > 0:
                ratio = rows[i][-1] / coef
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leaving]):
                    best, leaving = ratio, i
        if leaving is None:
            raise ValueError("linear program is unbounded")
        pivot_row = rows[leaving]
        pivot = pivot_row[entering]
        rows[leaving] = pivot_row = [x / pivot for x in pivot_row]
        for i in range(m):
            if i != leaving and rows[i][entering] != 0:
                factor = rows[i][entering]
                rows[i] = [x - factor * y for x, y in zip(rows[i], pivot_row)]
        factor = objective[entering]
        objective = [x - factor * y for x, y in zip(objective, pivot_row)]
        basis[leaving] = entering


def normalized_load(load: LoadVector, vertices: Sequence[Hashable]) -> list[Fraction]:
    """D^-1 beta as exact rationals."""
    out = []
    for v in vertices:
        beta = load.beta.get(v, 0)
        p = load.p(v)
        beta = beta if isinstance(beta, Fraction) else Fraction(beta)
        p = p if isinstance(p, Fraction) else Fraction(p)
        out.append(beta / p)
    return out


def stability_member_bruteforce(load: LoadVector, Gc) -> bool:
    """
    D^-1 beta in conv(independent sets)? The stable set polytope is
    down-closed, so membership is min{1^T lam : A lam >= x, lam >= 0} <= 1.
    Solved through its dual max{x^T y : A^T y <= 1, y >= 0}, whose origin is
    feasible, with rational arithmetic.
    """
    graph = _as_graph(Gc)
    vertices = list(graph.nodes)
    if len(vertices) > BRUTE_FORCE_MAX_VERTICES:
        raise BruteForceLimitError(
            f"brute-force stability check supports at most {BRUTE_FORCE_MAX_VERTICES} vertices, got {len(vertices)}"
        )
    x = normalized_load(load, vertices)
    if not vertices or all(v == 0 for v in x):
        return True
    sets = independent_sets(graph, maximal_only=True)
    A = [[1 if v in S else 0 for v in vertices] for S in sets]
    value = rational_simplex_max(x, A, [Fraction(1)] * len(sets))
    return value <= 1


def clique_members(cliques: CliqueList, vertices: Sequence[Hashable]) -> list[list[int]]:
    """Clique members as indices into `vertices`."""
    index = {v: k for k, v in enumerate(vertices)}
    return [sorted(index[v] for v in Q) for Q in cliques]


def stability_cliques(phi: np.ndarray, theta: float) -> tuple[ConflictGraph, ChordalCompletion, CliqueList]:
    """Connectivity -> conflict graph -> completion -> maximal cliques."""
    conflict = build_conflict(build_connectivity(phi, theta))
    completion = chordalize(conflict)
    cliques = maximal_cliques(completion)
    logger.debug(
        "conflict graph: %d vertices, %d edges, %d fill edges, %d cliques",
        conflict.num_vertices,
        conflict.graph.number_of_edges(),
        len(completion.added_edges),
        len(cliques),
    )
    return conflict, completion, cliques


def random_graph(rng: np.random.Generator, num_vertices: int, density: float) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(range(num_vertices))
    for a, b in itertools.combinations(range(num_vertices), 2):
        if rng.uniform() < density:
            g.add_edge(a, b)
    return g


def conflict_vertex_index(n: int) -> dict[tuple[int, int], int]:
    """Stable position of each ordered pair in `conflict_vertices(n)`."""
    return {v: k for k, v in enumerate(conflict_vertices(n))}


def random_conflict_instance(
    rng: np.random.Generator,
    num_vertices: int,
    density: float,
    load_scale: float = 1.0,
) -> tuple[nx.Graph, LoadVector]:
    """Random graph with rational loads and availabilities for property sweeps."""
    graph = random_graph(rng, num_vertices, density)
    scale = Fraction(load_scale).limit_denominator(1000) / max(1, num_vertices // 2)
    beta, availability = {}, {}
    for v in graph.nodes:
        p = Fraction(int(rng.integers(1, 11)), 10)
        availability[v] = p
        beta[v] = Fraction(int(rng.integers(0, 101)), 100) * p * scale
    return graph, LoadVector(beta=beta, availability=availability)


def stability_report(Gc, load: LoadVector, brute_force: bool = True) -> StabilityReport:
    """
    Inner-bound verdict on the chordal completion; the exact stable-set
    verdict as well when asked for and the graph is small enough.
    """
    completion = chordalize(Gc)
    cliques = maximal_cliques(completion)
    loads = [clique_load(load, Q) for Q in cliques]
    within = tuple(_within(x) for x in loads)
    exact = None
    if brute_force and completion.base.num_vertices <= BRUTE_FORCE_MAX_VERTICES:
        exact = stability_member_bruteforce(load, completion.base)
    report = StabilityReport(
        completion=completion,
        cliques=cliques,
        clique_loads=tuple(float(x) for x in loads),
        clique_within=within,
        chordal=verify_chordal(completion.graph),
        inner_bound=all(within),
        brute_force=exact,
    )
    if not report.consistent:
        logger.error("inner bound admitted a load outside the stability region")
    return report


def _decimal(x: float) -> Fraction:
    return Fraction(repr(float(x)))


def stability_check(request: StabilityCheckRequest) -> StabilityCheckResponse:
    """Stability-check payload in, per-clique loads and verdicts out."""
    if request.phi is not None:
        conflict = build_conflict(build_connectivity(np.asarray(request.phi, dtype=float), request.theta))
    else:
        vertices = [tuple(v) for v in request.vertices]
        conflict = ConflictGraph.from_edges(vertices, ((tuple(a), tuple(b)) for a, b in request.edges or []))
    known = set(conflict.vertices)
    missing = [e.pair for e in request.loads if tuple(e.pair) not in known]
    if missing:
        raise ConfigError(f"loads given for pairs outside the conflict graph: {missing}")
    load = LoadVector(
        beta={tuple(e.pair): _decimal(e.beta) for e in request.loads},
        availability={tuple(e.pair): _decimal(e.p) for e in request.loads},
    )
    report = stability_report(conflict, load, brute_force=request.brute_force)
    return StabilityCheckResponse(
        num_vertices=conflict.num_vertices,
        num_edges=conflict.graph.number_of_edges(),
        fill_edges=len(report.completion.added_edges),
        chordal=report.chordal,
        cliques=[
            CliqueReport(members=sorted(Q), load=x, within=ok)
            for Q, x, ok in zip(report.cliques, report.clique_loads, report.clique_within)
        ],
        inner_bound=report.inner_bound,
        brute_force=report.brute_force,
    )
