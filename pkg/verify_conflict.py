import sys
import os
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
from scipy.optimize import linprog

# Add current dir to path
sys.path.append(os.getcwd())

from app.core.exceptions import BruteForceLimitError, NotChordalError
from app.models import LoadVector
from app.schemas.conflict import StabilityCheckRequest
from app.services.conflict_service import (
    build_conflict,
    build_connectivity,
    chordalize,
    clique_load,
    conflict_vertex_index,
    inner_bound_member,
    maximal_cliques,
    random_conflict_instance,
    random_graph,
    rational_simplex_max,
    stability_check,
    stability_member_bruteforce,
    stability_report,
    verify_chordal,
)


def cycle(k: int) -> nx.Graph:
    return nx.cycle_graph(k)


def test_connectivity_threshold_is_strict():
    phi = np.array([[0.0, 2.0, 1.0], [2.0, 0.0, 0.5], [1.0, 0.5, 0.0]])
    G = build_connectivity(phi, 1.0)
    assert G.connected(0, 1)
    assert not G.connected(0, 2)
    assert G.connected(2, 2)
    assert G.max_degree == 1


def test_conflict_edges():
    # no D2D links: (i, j) and (k, l) clash only through shared users
    G = build_connectivity(np.zeros((3, 3)), 1.0)
    conflict = build_conflict(G)
    graph = conflict.graph
    assert conflict.num_vertices == 6
    assert graph.has_edge((0, 1), (1, 2))
    assert graph.has_edge((0, 1), (1, 0))
    assert not graph.has_edge((0, 1), (2, 1))


def test_vertex_index_is_lexicographic():
    index = conflict_vertex_index(3)
    assert index[(0, 1)] == 0
    assert index[(2, 1)] == 5
    assert len(index) == 6


def test_chordal_checks_against_networkx():
    rng = np.random.default_rng(0)
    assert not verify_chordal(cycle(4))
    assert verify_chordal(cycle(3))
    for _ in range(50):
        g = random_graph(rng, int(rng.integers(1, 13)), float(rng.uniform(0.1, 0.7)))
        assert verify_chordal(g) == nx.is_chordal(g)


def test_completion_is_chordal_supergraph():
    rng = np.random.default_rng(1)
    for _ in range(50):
        g = random_graph(rng, int(rng.integers(2, 13)), float(rng.uniform(0.1, 0.6)))
        completion = chordalize(g)
        assert nx.is_chordal(completion.graph)
        assert all(completion.graph.has_edge(a, b) for a, b in g.edges)
        assert completion.graph.number_of_edges() == g.number_of_edges() + len(completion.added_edges)


def test_maximal_cliques_match_networkx():
    rng = np.random.default_rng(2)
    for _ in range(50):
        g = random_graph(rng, int(rng.integers(1, 13)), float(rng.uniform(0.1, 0.8)))
        completion = chordalize(g)
        ours = {frozenset(q) for q in maximal_cliques(completion)}
        theirs = {frozenset(q) for q in nx.find_cliques(completion.graph)}
        assert ours == theirs
        assert len(ours) <= g.number_of_nodes()


def test_maximal_cliques_require_chordal_graph():
    with pytest.raises(NotChordalError):
        maximal_cliques(cycle(5))


def test_clique_load_exact():
    load = LoadVector(beta={"a": Fraction(1, 4), "b": Fraction(1, 3)}, availability={"a": Fraction(1, 2)})
    assert clique_load(load, ["a", "b"]) == Fraction(5, 6)
    assert clique_load(load, ["a", "b", "c"]) == Fraction(5, 6)
    assert isinstance(clique_load(load, ["b"]), Fraction)
    ints = LoadVector(beta={"a": 1, "b": 0}, availability={"a": 1})
    assert isinstance(clique_load(ints, ["a", "b"]), Fraction)
    mixed = LoadVector(beta={"a": 1, "b": Fraction(1, 6)}, availability={"a": Fraction(3, 4)})
    assert clique_load(mixed, ["a", "b"]) == Fraction(3, 2)
    floats = LoadVector(beta={"a": 0.25}, availability={"a": 0.5})
    assert clique_load(floats, ["a", "b"]) == pytest.approx(0.5)


def test_inner_bound_on_boundary_is_closed():
    g = nx.complete_graph(3)
    load = LoadVector(beta={0: Fraction(1, 3), 1: Fraction(1, 3), 2: Fraction(1, 3)}, availability={})
    cliques = maximal_cliques(chordalize(g))
    assert inner_bound_member(load, cliques)
    assert stability_member_bruteforce(load, g)


def test_five_cycle_region_exceeds_clique_bound():
    # every edge load 1/2 + 1/2 fits the clique inequalities of C5 but not the stable set polytope
    g = cycle(5)
    load = LoadVector(beta={v: Fraction(1, 2) for v in g.nodes}, availability={})
    assert not stability_member_bruteforce(load, g)
    load_ok = LoadVector(beta={v: Fraction(2, 5) for v in g.nodes}, availability={})
    assert stability_member_bruteforce(load_ok, g)


def test_inner_bound_implies_stability():
    rng = np.random.default_rng(3)
    for _ in range(150):
        g, load = random_conflict_instance(rng, int(rng.integers(1, 11)), float(rng.uniform(0.1, 0.7)), 1.5)
        completion = chordalize(g)
        if inner_bound_member(load, maximal_cliques(completion)):
            assert stability_member_bruteforce(load, g)


@pytest.mark.slow
def test_inner_bound_implies_stability_full():
    rng = np.random.default_rng(4)
    for _ in range(500):
        g, load = random_conflict_instance(rng, int(rng.integers(1, 13)), float(rng.uniform(0.1, 0.7)), 1.5)
        report = stability_report(g, load)
        assert report.chordal
        assert report.consistent


def test_rational_simplex_matches_linprog():
    rng = np.random.default_rng(5)
    for _ in range(30):
        m, n = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        A = rng.integers(0, 3, size=(m, n))
        A[:, A.sum(axis=0) == 0] = 1
        c = rng.integers(0, 5, size=n)
        b = rng.integers(1, 6, size=m)
        exact = rational_simplex_max([Fraction(int(x)) for x in c], A.tolist(), [Fraction(int(x)) for x in b])
        result = linprog(-c, A_ub=A, b_ub=b, bounds=(0, None), method="highs")
        assert float(exact) == pytest.approx(-result.fun, abs=1e-9)


def test_brute_force_limit():
    g = nx.empty_graph(13)
    load = LoadVector(beta={0: 0.1}, availability={})
    with pytest.raises(BruteForceLimitError):
        stability_member_bruteforce(load, g)


def test_stability_check_payload():
    request = StabilityCheckRequest(
        phi=[[0.0, 5.0, 0.5], [5.0, 0.0, 0.5], [0.5, 0.5, 0.0]],
        theta=1.0,
        loads=[
            {"pair": [0, 1], "beta": 0.3, "p": 0.9},
            {"pair": [1, 0], "beta": 0.2},
        ],
    )
    report = stability_check(request)
    assert report.num_vertices == 6
    assert report.chordal
    assert report.brute_force is not None
    assert report.inner_bound == all(c.within for c in report.cliques)
    assert not (report.inner_bound and report.brute_force is False)


def test_stability_check_explicit_graph_overload():
    request = StabilityCheckRequest(
        vertices=[[0, 1], [1, 0]],
        edges=[[[0, 1], [1, 0]]],
        loads=[{"pair": [0, 1], "beta": 0.6}, {"pair": [1, 0], "beta": 0.6}],
    )
    report = stability_check(request)
    assert report.cliques[0].load == pytest.approx(1.2)
    assert not report.inner_bound
    assert report.brute_force is False
