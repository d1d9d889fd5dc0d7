"""
Scheduler Service: utility model, the exhaustive and greedy frame policies,
relay flow control through clique loads, and the barrier-augmented policy.

Sets are handled as sorted tuples of indices into the frame's candidate list.
Candidates are sorted, so index order is the (i, j, d) lexicographic order.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from app.core.exceptions import DomainError, GuardExceededError
from app.models import (
    AveragingMode,
    CliqueState,
    ScheduleDecision,
    SchedulerKind,
    StreamId,
    UserState,
    UtilityParams,
)
from app.models.stream import cooperative_pairs, relay_users
from app.services.rate_model_service import FrameEvaluator, PhyRateModel, RateModel

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_CANDIDATES = 20
BARRIER_EXPONENT_CAP = 700.0
EVAL_CHUNK = 4096

Score = Callable[[np.ndarray], np.ndarray]


# --- utility -------------------------------------------------------------------


def _check_domain(r, beta) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(r, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(r <= 0):
        raise DomainError("utility needs r > 0")
    if np.any(beta >= 1) or np.any(beta < 0):
        raise DomainError("utility needs 0 <= beta < 1")
    return r, beta


def utility(r, beta, params: UtilityParams):
    """U = ln r + kappa ln(1 - beta)."""
    r, beta = _check_domain(r, beta)
    value = np.log(r) + params.kappa * np.log1p(-beta)
    return float(value) if value.ndim == 0 else value


def utility_gradient(r, beta, params: UtilityParams):
    """(dU/dr, dU/dbeta) = (1/r, -kappa/(1 - beta))."""
    r, beta = _check_domain(r, beta)
    d_r = 1.0 / r
    d_beta = -params.kappa / (1.0 - beta)
    if d_r.ndim == 0:
        return float(d_r), float(d_beta)
    return d_r, d_beta


def total_utility(r, beta, params: UtilityParams) -> float:
    return float(np.sum(utility(r, beta, params)))


# --- flow control -------------------------------------------------------------


def build_clique_state(
    cliques: Iterable[Iterable[tuple[int, int]]],
    vertices: Sequence[tuple[int, int]],
    availability: Mapping[tuple[int, int], float] | np.ndarray,
) -> CliqueState:
    """Clique states with exact 1/p_ij weights (p taken at its decimal value)."""
    index = {v: k for k, v in enumerate(vertices)}
    members = [sorted(index[tuple(v)] for v in Q) for Q in cliques]
    weights = []
    for i, j in vertices:
        p = availability[i, j] if isinstance(availability, np.ndarray) else availability.get((i, j), 1.0)
        weights.append(1 / Fraction(repr(float(p))))
    return CliqueState(members=members, weights=weights)


def eligible_pairs(
    clique_state: CliqueState,
    vertices: Sequence[tuple[int, int]],
    num_users: int,
) -> set[tuple[int, int]]:
    """N(t): pairs whose every containing clique has beta_Q(t) <= 1; self pairs always."""
    blocked = set()
    for q in np.flatnonzero(clique_state.violated()):
        blocked.update(clique_state.members[q])
    pairs = {v for k, v in enumerate(vertices) if k not in blocked}
    pairs.update((i, i) for i in range(num_users))
    return pairs


# --- objective ----------------------------------------------------------------


def objective_weights(users: UserState, params: UtilityParams) -> tuple[np.ndarray, np.ndarray]:
    """Gradient weights: 1/r_i per unit rate and kappa/(1 - beta_j) per relay user."""
    r = users.r
    if np.any(r <= 0):
        raise DomainError("throughput averages must stay positive")
    beta = users.beta_for_gradient()
    return 1.0 / r, params.kappa / (1.0 - beta)


def relay_indicator(evaluator: FrameEvaluator, idx: np.ndarray, num_users: int) -> np.ndarray:
    """(C, n) indicator of distinct relay users per set."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((idx.shape[0], num_users))
    if idx.shape[1] == 0:
        return out
    relays = evaluator.relay[idx]
    coop = relays != evaluator.dest[idx]
    rows, cols = np.nonzero(coop)
    out[rows, relays[rows, cols]] = 1.0
    return out


def objective_values(
    evaluator: FrameEvaluator,
    idx: np.ndarray,
    rate_weight: np.ndarray,
    relay_penalty: np.ndarray,
) -> np.ndarray:
    """f for each row of idx; infeasible sets score -inf."""
    rates = evaluator.user_rates(idx)
    f = np.nan_to_num(rates, nan=0.0) @ rate_weight - relay_indicator(evaluator, idx, rate_weight.size) @ relay_penalty
    f[np.isnan(rates).any(axis=1)] = -np.inf
    return f


def _set_indices(evaluator: FrameEvaluator, s: Sequence[StreamId]) -> np.ndarray:
    position = {sid: k for k, sid in enumerate(evaluator.candidates)}
    return np.array([sorted(position[x] for x in s)], dtype=np.int64).reshape(1, len(s))


def objective_f(s: Sequence[StreamId], users: UserState, params: UtilityParams, model: RateModel, known) -> float:
    """f(s) = sum of expected rates over 1/r_i minus kappa/(1 - beta_j) per relay user j."""
    if not s:
        return 0.0
    evaluator = model.evaluator(known, sorted(s))
    w, pen = objective_weights(users, params)
    return float(objective_values(evaluator, _set_indices(evaluator, s), w, pen)[0])


def expected_stream_rate(s: Sequence[StreamId], stream_id: StreamId, model: PhyRateModel, known) -> float:
    """E_Z[R] of one stream when the whole set s is scheduled."""
    s = sorted(s)
    if stream_id not in s:
        raise ValueError(f"{stream_id} is not part of the schedule set")
    evaluator = model.evaluator(known, s)
    rates = evaluator.stream_rates(np.arange(len(s))[None, :])[0]
    return float(rates[s.index(stream_id)])


def clique_terms(loads: np.ndarray, barrier_index: float) -> np.ndarray:
    """nB exp(nB (beta_Q - 1)) per clique; exponents above the cap give +inf."""
    exponent = barrier_index * (np.asarray(loads, dtype=float) - 1.0)
    terms = np.full(exponent.shape, np.inf)
    finite = exponent <= BARRIER_EXPONENT_CAP
    terms[finite] = barrier_index * np.exp(exponent[finite])
    return terms


def barrier_penalties(touched: np.ndarray, terms: np.ndarray) -> np.ndarray:
    """Sum of terms over the cliques each row touches; (C, nQ) bool x (nQ,)."""
    if touched.shape[1] == 0:
        return np.zeros(touched.shape[0])
    infinite = ~np.isfinite(terms)
    penalty = touched[:, ~infinite].astype(float) @ terms[~infinite]
    penalty[touched[:, infinite].any(axis=1)] = np.inf
    return penalty


def candidate_cliques(
    candidates: Sequence[StreamId],
    clique_state: CliqueState,
    pair_vertex: Mapping[tuple[int, int], int],
) -> np.ndarray:
    """(S, nQ) membership of each candidate's pair in each clique."""
    out = np.zeros((len(candidates), clique_state.size), dtype=bool)
    for k, sid in enumerate(candidates):
        if not sid.is_self:
            out[k, clique_state.by_vertex.get(pair_vertex[sid.pair], [])] = True
    return out


def barrier_objective(
    s: Sequence[StreamId],
    users: UserState,
    params: UtilityParams,
    model: RateModel,
    known,
    barrier_index: float,
    clique_state: CliqueState,
    pair_vertex: Mapping[tuple[int, int], int],
) -> float:
    """f(s) - nB * sum over cliques touched by s's relay pairs of exp(nB (beta_Q - 1))."""
    if barrier_index < 1:
        raise DomainError("barrier index must be at least 1")
    if not s:
        return 0.0
    f = objective_f(s, users, params, model, known)
    touched = np.zeros((1, clique_state.size), dtype=bool)
    for i, j in cooperative_pairs(tuple(s)):
        touched[0, clique_state.by_vertex.get(pair_vertex[(i, j)], [])] = True
    return f - float(barrier_penalties(touched, clique_terms(clique_state.loads(), barrier_index))[0])


# --- set search ---------------------------------------------------------------


def _compatible(dest: np.ndarray, relay: np.ndarray, chosen: Sequence[int], c: int, multi_relay: bool) -> bool:
    if multi_relay:
        return True
    return all(not (dest[k] == dest[c] and relay[k] != relay[c]) for k in chosen)


def enumerate_sets(dest: np.ndarray, relay: np.ndarray, max_len: int, multi_relay: bool = False) -> dict[int, np.ndarray]:
    """All compatible index sets of size 1..max_len, lexicographic within each size."""
    by_size: dict[int, list[tuple[int, ...]]] = {k: [] for k in range(1, max_len + 1)}
    S = len(dest)

    def extend(chosen: list[int], start: int) -> None:
        for c in range(start, S):
            if not _compatible(dest, relay, chosen, c, multi_relay):
                continue
            chosen.append(c)
            by_size[len(chosen)].append(tuple(chosen))
            if len(chosen) < max_len:
                extend(chosen, c + 1)
            chosen.pop()

    if max_len > 0:
        extend([], 0)
    return {k: np.array(sorted(v), dtype=np.int64).reshape(len(v), k) for k, v in by_size.items() if v}


def exhaustive_schedule(
    evaluator: FrameEvaluator,
    score: Score,
    max_len: int,
    multi_relay: bool = False,
) -> tuple[tuple[int, ...], float]:
    """argmax of score over every compatible set; ties go to the lexicographically smallest set."""
    S = len(evaluator.candidates)
    if S > MAX_EXHAUSTIVE_CANDIDATES:
        raise GuardExceededError(
            f"{S} candidate streams exceed the exhaustive limit of {MAX_EXHAUSTIVE_CANDIDATES}; "
            "use greedy_schedule (scheduler kind 'greedy') instead"
        )
    best: tuple[int, ...] = ()
    best_value = 0.0
    for _, sets in sorted(enumerate_sets(evaluator.dest, evaluator.relay, max_len, multi_relay).items()):
        for start in range(0, sets.shape[0], EVAL_CHUNK):
            chunk = sets[start : start + EVAL_CHUNK]
            values = score(chunk)
            top = values.max()
            if not np.isfinite(top) or top < best_value:
                continue
            row = tuple(int(x) for x in chunk[int(np.flatnonzero(values == top)[0])])
            if top > best_value or row < best:
                best, best_value = row, float(top)
    return best, best_value


def greedy_schedule(
    evaluator: FrameEvaluator,
    score: Score,
    eps: float,
    max_len: int,
    multi_relay: bool = False,
) -> tuple[tuple[int, ...], float]:
    """
    Add the stream that maximizes the score of the grown set, while the best
    value improves by more than a factor (1 + eps).
    """
    if eps <= 0:
        raise DomainError("greedy threshold eps must be positive")
    S = len(evaluator.candidates)
    current: tuple[int, ...] = ()
    f_prev = 0.0
    for iteration in range(1, max_len + 1):
        options = [
            c for c in range(S) if c not in current and _compatible(evaluator.dest, evaluator.relay, current, c, multi_relay)
        ]
        if not options:
            break
        idx = np.array([sorted(current + (c,)) for c in options], dtype=np.int64)
        values = score(idx)
        k = int(np.argmax(values))
        best = float(values[k])
        if not np.isfinite(best):
            break
        if iteration == 1:
            if best <= 0:
                break
        elif best <= (1.0 + eps) * f_prev:
            break
        current, f_prev = tuple(int(x) for x in idx[k]), best
    return current, f_prev


# --- user averages ------------------------------------------------------------


def update_user_states(users: UserState, delivered: np.ndarray, schedule: Sequence[StreamId], t: int) -> UserState:
    """Running means (exact relay counts) or EWMA with window T_w."""
    if t < 1:
        raise ValueError("frames are numbered from 1")
    if t != users.frame + 1:
        raise ValueError(f"state update for frame {t} after frame {users.frame}")
    delivered = np.asarray(delivered, dtype=float)
    relayed = np.zeros(users.num_users, dtype=np.int64)
    relayed[list(relay_users(tuple(schedule)))] = 1
    rate_sum = users.rate_sum + delivered
    relay_count = users.relay_count + relayed
    if users.mode == AveragingMode.RUNNING:
        r = np.maximum(rate_sum / t, users.warm_start)
        beta = relay_count / t
    else:
        a = 1.0 / users.window
        r = np.maximum((1.0 - a) * users.r + a * delivered, users.warm_start)
        beta = (1.0 - a) * users.beta + a * relayed
    return replace(users, rate_sum=rate_sum, relay_count=relay_count, r=r, beta=beta, frame=t)


# --- policy -------------------------------------------------------------------


class Scheduler:
    """
    Frame policy over a rate model: exhaustive or greedy search on f with
    flow control, or the barrier objective over all streams.
    """

    def __init__(
        self,
        model: RateModel,
        params: UtilityParams,
        kind: SchedulerKind = SchedulerKind.GREEDY,
        max_streams: Optional[int] = None,
        greedy_eps: float = 0.01,
        barrier_index: Optional[float] = None,
        barrier_search: SchedulerKind = SchedulerKind.EXHAUSTIVE,
        clique_state: Optional[CliqueState] = None,
        vertices: Sequence[tuple[int, int]] = (),
        flow_control: bool = True,
        cooperation: bool = True,
        multi_relay: bool = False,
    ):
        self.model = model
        self.params = params
        self.kind = SchedulerKind(kind)
        self.greedy_eps = greedy_eps
        self.barrier_index = barrier_index
        self.barrier_search = SchedulerKind(barrier_search)
        self.clique_state = clique_state
        self.vertices = list(vertices)
        self.pair_vertex = {v: k for k, v in enumerate(self.vertices)}
        self.flow_control = flow_control
        self.cooperation = cooperation
        self.multi_relay = multi_relay
        limit = model.max_streams if max_streams is None else min(max_streams, model.max_streams)
        self.max_len = max(limit, 0)
        if self.kind == SchedulerKind.BARRIER:
            if barrier_index is None or barrier_index < 1:
                raise DomainError("barrier scheduler needs barrier_index >= 1")
            if clique_state is None:
                raise DomainError("barrier scheduler needs clique states")

    def _eligible(self) -> Optional[set[tuple[int, int]]]:
        if self.clique_state is None:
            return None
        return eligible_pairs(self.clique_state, self.vertices, self.model.num_users)

    def schedule(self, known, users: UserState) -> ScheduleDecision:
        candidates = self.model.candidate_streams(known, cooperation=self.cooperation)
        eligible = self._eligible()
        pair_count = self.model.num_users * (self.model.num_users - 1)
        use_barrier = self.kind == SchedulerKind.BARRIER
        if eligible is not None:
            pair_count = len(eligible) - self.model.num_users
            if self.flow_control and not use_barrier:
                candidates = [c for c in candidates if c.pair in eligible]

        evaluator = self.model.evaluator(known, candidates)
        w, pen = objective_weights(users, self.params)

        if use_barrier:
            membership = candidate_cliques(candidates, self.clique_state, self.pair_vertex)
            terms = clique_terms(self.clique_state.loads(), self.barrier_index)

            def score(idx: np.ndarray) -> np.ndarray:
                touched = membership[idx].any(axis=1) if idx.shape[1] else np.zeros((idx.shape[0], terms.size), bool)
                return objective_values(evaluator, idx, w, pen) - barrier_penalties(touched, terms)

            search = self.barrier_search
        else:

            def score(idx: np.ndarray) -> np.ndarray:
                return objective_values(evaluator, idx, w, pen)

            search = self.kind

        if search == SchedulerKind.EXHAUSTIVE:
            chosen, value = exhaustive_schedule(evaluator, score, self.max_len, self.multi_relay)
        else:
            chosen, value = greedy_schedule(evaluator, score, self.greedy_eps, self.max_len, self.multi_relay)
        schedule = tuple(candidates[k] for k in chosen)
        return ScheduleDecision(schedule=schedule, f_value=value, eligible_pair_count=pair_count)

    def commit(self, schedule: Sequence[StreamId], t: int) -> list[tuple[int, int]]:
        """Record this frame's relay arrivals in the clique states; returns the arrived pairs."""
        arrived = sorted(cooperative_pairs(tuple(schedule)))
        if self.clique_state is not None:
            self.clique_state.record([self.pair_vertex[p] for p in arrived], t)
        return arrived
