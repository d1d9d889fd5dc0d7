import sys
import os
from fractions import Fraction

import numpy as np
import pytest

# Add current dir to path
sys.path.append(os.getcwd())

from app.models import ArrivalRecord, QueueMatrix
from app.services.conflict_service import build_conflict, build_connectivity
from app.services.queue_service import (
    QueueService,
    drift_bound_check,
    lindley_replay,
    mac_protocol,
    record_arrivals,
    step_queues,
)


def chain_conflict(n: int = 4):
    # users on a line: i <-> i+1 connected
    phi = np.zeros((n, n))
    for i in range(n - 1):
        phi[i, i + 1] = phi[i + 1, i] = 5.0
    return build_conflict(build_connectivity(phi, 1.0))


def test_step_queues_truncates_then_adds():
    Q = QueueMatrix(np.array([[0, 2], [0, 0]]), frame=3)
    A = np.array([[0, 1], [1, 0]])
    B = np.ones((2, 2), dtype=int)
    J = np.ones((2, 2), dtype=int)
    mu = np.array([[0, 1], [1, 0]])
    nxt = step_queues(Q, A, B, J, mu)
    np.testing.assert_array_equal(nxt.Q, [[0, 2], [1, 0]])
    assert nxt.frame == 4


def test_step_queues_blocked_link_serves_nothing():
    Q = QueueMatrix(np.array([[0, 2], [0, 0]]))
    B = np.array([[1, 0], [1, 1]])
    nxt = step_queues(Q, np.zeros((2, 2)), B, np.ones((2, 2)), np.ones((2, 2)))
    assert nxt.Q[0, 1] == 2


def test_queue_matrix_rejects_negative():
    with pytest.raises(ValueError):
        QueueMatrix(np.array([[0, -1], [0, 0]]))


def test_mac_selects_independent_set_longest_first():
    conflict = chain_conflict(4)
    rng = np.random.default_rng(0)
    adj = conflict.adjacency()
    index = conflict.index()
    for _ in range(50):
        Qm = rng.integers(0, 4, size=(4, 4))
        np.fill_diagonal(Qm, 0)
        B = rng.integers(0, 2, size=(4, 4))
        decision = mac_protocol(QueueMatrix(Qm), conflict, B)
        chosen = [index[(int(i), int(j))] for i, j in zip(*np.nonzero(decision.mu))]
        for a in chosen:
            for b in chosen:
                assert a == b or not adj[a, b]
            i, j = conflict.vertices[a]
            assert Qm[i, j] > 0 and B[i, j] == 1
            assert decision.J[i, j] == 1
        # neighbours of a transmitter are jammed
        for a in chosen:
            for b in np.flatnonzero(adj[a]):
                i, j = conflict.vertices[b]
                assert decision.J[i, j] == 0
        # maximal: every eligible pair is chosen or next to a chosen one
        for k, (i, j) in enumerate(conflict.vertices):
            if Qm[i, j] > 0 and B[i, j]:
                assert k in chosen or any(adj[k, c] for c in chosen)


def test_mac_prefers_the_longest_queue():
    conflict = chain_conflict(2)
    Qm = np.array([[0, 1], [5, 0]])
    decision = mac_protocol(QueueMatrix(Qm), conflict, np.ones((2, 2), dtype=int))
    assert decision.mu[1, 0] == 1
    assert decision.mu[0, 1] == 0
    assert decision.J[0, 1] == 0
    assert decision.served(np.ones((2, 2), dtype=int)) == [(1, 0)]


def test_record_arrivals_counts_and_rates():
    record = ArrivalRecord.empty(3)
    A = np.zeros((3, 3), dtype=int)
    A[0, 2] = 1
    record = record_arrivals(record, A, 1)
    record = record_arrivals(record, np.zeros((3, 3), dtype=int), 2)
    assert record.rate(0, 2) == Fraction(1, 2)
    assert record.rates()[0, 2] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        record_arrivals(record, A, 5)
    with pytest.raises(ValueError):
        record_arrivals(ArrivalRecord.empty(3), A, 0)


def test_drift_bound_accepts_steady_unit_load():
    assert drift_bound_check([Fraction(1)] * 20, clique_size=1, p_min=1)


def test_drift_bound_rejects_jump_above_one():
    assert not drift_bound_check([Fraction(1), Fraction(3, 2)], clique_size=1, p_min=1)


def test_drift_bound_tail_limit():
    series = [1.0] * 10 + [1.2] * 10
    assert not drift_bound_check(series, clique_size=1, p_min=1.0, burn_in=10)
    assert drift_bound_check([0.5] * 20, clique_size=2, p_min=0.5, burn_in=10)


def test_lindley_replay_matches_service_loop():
    conflict = chain_conflict(3)
    service = QueueService(conflict, 3, keep_trace=True)
    rng = np.random.default_rng(1)
    arrivals, services = [], []
    for t in range(1, 201):
        A = np.zeros((3, 3), dtype=np.int64)
        i, j = rng.choice(3, size=2, replace=False)
        if rng.uniform() < 0.3:
            A[i, j] = 1
        B = rng.integers(0, 2, size=(3, 3))
        decision = service.step(A, B, t)
        arrivals.append(A)
        services.append(B * decision.J * decision.mu)
    replay = lindley_replay(np.zeros((3, 3), dtype=np.int64), arrivals, services)
    np.testing.assert_array_equal(replay, service.queues.Q)
    assert service.arrivals.frame == 200
    assert service.queues.Q.sum() == service.arrivals.counts.sum() - service.served_total


def test_trace_frame_columns():
    conflict = chain_conflict(2)
    service = QueueService(conflict, 2, keep_trace=True)
    A = np.array([[0, 1], [0, 0]])
    service.step(A, np.ones((2, 2), dtype=int), 1)
    trace = service.trace_frame()
    assert list(trace.columns) == ["t", "i", "j", "Q", "A", "mu", "B", "J"]
    row = trace[(trace.i == 0) & (trace.j == 1)].iloc[0]
    assert row.Q == 1 and row.A == 1


def test_no_pairs_single_user():
    service = QueueService(build_conflict(build_connectivity(np.zeros((1, 1)), 1.0)), 1)
    decision = service.step(np.zeros((1, 1), dtype=int), np.ones((1, 1), dtype=int), 1)
    assert decision.served(np.ones((1, 1), dtype=int)) == []
