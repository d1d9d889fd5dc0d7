"""
Queue Service: relay transmission queues, the intra-D2D MAC protocol and
running arrival-rate averages.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from app.models import ArrivalRecord, ConflictGraph, QueueMatrix, ServiceDecision


def step_queues(
    Q: QueueMatrix,
    A: np.ndarray,
    B: np.ndarray,
    J: np.ndarray,
    mu: np.ndarray,
) -> QueueMatrix:
    """Q'_ij = max(Q_ij - B_ij J_ij mu_ij, 0) + A_ij."""
    service = np.asarray(B) * np.asarray(J) * np.asarray(mu)
    nxt = np.maximum(Q.Q - service, 0) + np.asarray(A, dtype=np.int64)
    np.fill_diagonal(nxt, 0)
    return QueueMatrix(Q=nxt.astype(np.int64), frame=Q.frame + 1)


def mac_protocol(Q: QueueMatrix, conflict: ConflictGraph, B: np.ndarray, adjacency: Optional[np.ndarray] = None) -> ServiceDecision:
    """
    Longest-queue-first greedy maximal independent set over pairs with a
    non-empty queue and an available link. J_ij = 0 exactly for pairs that
    conflict with a selected transmitter.
    """
    n = Q.Q.shape[0]
    vertices = conflict.vertices
    adj = conflict.adjacency() if adjacency is None else adjacency
    lengths = np.array([Q.Q[i, j] for i, j in vertices], dtype=np.int64)
    avail = np.array([B[i, j] for i, j in vertices], dtype=bool)
    candidates = [k for k in np.flatnonzero((lengths > 0) & avail)]
    # longest first; ties by vertex order
    candidates.sort(key=lambda k: (-lengths[k], k))

    blocked = np.zeros(len(vertices), dtype=bool)
    selected = []
    for k in candidates:
        if blocked[k]:
            continue
        selected.append(k)
        blocked |= adj[k]
        blocked[k] = True

    mu = np.zeros((n, n), dtype=np.int64)
    J = np.ones((n, n), dtype=np.int64)
    interfered = np.zeros(len(vertices), dtype=bool)
    for k in selected:
        interfered |= adj[k]
    for k, (i, j) in enumerate(vertices):
        if interfered[k]:
            J[i, j] = 0
    for k in selected:
        i, j = vertices[k]
        mu[i, j] = 1
    np.fill_diagonal(J, 0)
    return ServiceDecision(mu=mu, J=J)


def record_arrivals(record: ArrivalRecord, A: np.ndarray, t: int) -> ArrivalRecord:
    """beta_ij(t) = ((t-1) beta_ij(t-1) + A_ij) / t, carried as integer counts."""
    if t < 1:
        raise ValueError("frames are numbered from 1")
    if t != record.frame + 1:
        raise ValueError(f"arrivals for frame {t} after frame {record.frame}")
    return ArrivalRecord(counts=record.counts + np.asarray(A, dtype=np.int64), frame=t)


def drift_bound_check(
    series: Sequence,
    clique_size: int,
    p_min: float,
    burn_in: Optional[int] = None,
) -> bool:
    """
    beta_Q(t) <= (t-1)/t beta_Q(t-1) + |Q|/(t p_min) 1{beta_Q(t-1) <= 1} for every
    t >= 1 (beta_Q(0) = 0), and max_{t > burn_in} beta_Q(t) <= 1 + |Q|/(burn_in p_min).
    Rational inputs are compared exactly; floats with a 1e-12 slack.
    """
    p = Fraction(p_min).limit_denominator(10**9) if not isinstance(p_min, Fraction) else p_min
    prev = Fraction(0)
    exact = all(isinstance(x, (int, Fraction)) for x in series)
    slack = 0 if exact else 1e-12
    for t, value in enumerate(series, start=1):
        value = value if exact else float(value)
        step = Fraction(clique_size, 1) / (t * p) if prev <= 1 else Fraction(0)
        bound = Fraction(t - 1, t) * prev + step
        if value > (bound if exact else float(bound)) + slack:
            return False
        prev = value if exact else Fraction(value)
    if burn_in:
        tail = [series[t] for t in range(burn_in, len(series))]
        limit = 1 + Fraction(clique_size, 1) / (burn_in * p)
        if tail and max(float(x) for x in tail) > float(limit) + 1e-12:
            return False
    return True


def lindley_replay(Q0: np.ndarray, arrivals: Sequence[np.ndarray], services: Sequence[np.ndarray]) -> np.ndarray:
    """Q(T) = Q(0) + sum A - sum effective services, truncation applied per frame."""
    Q = np.asarray(Q0, dtype=np.int64).copy()
    served_total = np.zeros_like(Q)
    arrived_total = np.zeros_like(Q)
    for A, S in zip(arrivals, services):
        effective = np.minimum(Q, S)
        served_total += effective
        arrived_total += A
        Q = Q - effective + A
    return np.asarray(Q0) + arrived_total - served_total


class QueueService:
    """Owns Q(t) and the arrival record for one drop; optionally keeps a CSV trace."""

    def __init__(self, conflict: ConflictGraph, num_users: int, keep_trace: bool = False):
        self.conflict = conflict
        self.adjacency = conflict.adjacency() if conflict.num_vertices else np.zeros((0, 0), dtype=bool)
        self.queues = QueueMatrix.empty(num_users)
        self.arrivals = ArrivalRecord.empty(num_users)
        self.keep_trace = keep_trace
        self.trace_rows: list[dict] = []
        self.served_total = 0

    def step(self, A: np.ndarray, B: np.ndarray, t: int) -> ServiceDecision:
        """Record arrivals, serve with the MAC protocol, then advance the queues."""
        self.arrivals = record_arrivals(self.arrivals, A, t)
        if self.conflict.num_vertices:
            decision = mac_protocol(self.queues, self.conflict, B, self.adjacency)
        else:
            n = self.queues.Q.shape[0]
            decision = ServiceDecision(mu=np.zeros((n, n), dtype=np.int64), J=np.zeros((n, n), dtype=np.int64))
        before = self.queues
        self.queues = step_queues(before, A, B, decision.J, decision.mu)
        self.served_total += int(np.sum(np.minimum(before.Q, B * decision.J * decision.mu)))
        if self.keep_trace:
            for i, j in self.conflict.vertices:
                if before.Q[i, j] or A[i, j] or decision.mu[i, j]:
                    self.trace_rows.append(
                        dict(
                            t=t,
                            i=i,
                            j=j,
                            Q=int(self.queues.Q[i, j]),
                            A=int(A[i, j]),
                            mu=int(decision.mu[i, j]),
                            B=int(B[i, j]),
                            J=int(decision.J[i, j]),
                        )
                    )
        return decision

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.trace_rows, columns=["t", "i", "j", "Q", "A", "mu", "B", "J"])
