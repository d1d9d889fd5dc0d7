"""
Rate Model Service: what the scheduler knows about achievable rates.

A rate model lists the candidate streams for a frame, evaluates expected
per-user rates for many schedule sets at once and reports the rates actually
delivered. `PhyRateModel` drives simulations from channel states;
`TableRateModel` serves small instances with rates fixed by a table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from app.core.exceptions import ConfigError
from app.models import ChannelState, FadingGrid, StreamId, make_set
from app.schemas.reference import RateTable
from app.services.phy_service import batch_schedule_rates, coop_snr, decompose_pairs, fading_grid

logger = logging.getLogger(__name__)


class FrameEvaluator(Protocol):
    candidates: list[StreamId]
    dest: np.ndarray
    relay: np.ndarray

    def user_rates(self, idx: np.ndarray) -> np.ndarray:
        """(C, K) candidate indices -> (C, n) expected rates; NaN rows are infeasible."""
        ...


class RateModel(Protocol):
    num_users: int
    max_streams: int

    def candidate_streams(self, known, cooperation: bool = True) -> list[StreamId]: ...

    def evaluator(self, known, candidates: Sequence[StreamId]) -> FrameEvaluator: ...

    def delivered_rates(self, known, actual, schedule: Sequence[StreamId]) -> np.ndarray: ...


def _index_arrays(candidates: Sequence[StreamId]) -> tuple[np.ndarray, np.ndarray]:
    dest = np.array([c.dest for c in candidates], dtype=np.int64)
    relay = np.array([c.relay for c in candidates], dtype=np.int64)
    return dest, relay


def per_user(stream_rates: np.ndarray, dest_idx: np.ndarray, n: int) -> np.ndarray:
    """Sum (C, K) stream rates into (C, n) per destination."""
    C = stream_rates.shape[0]
    out = np.zeros((C, n))
    rows = np.broadcast_to(np.arange(C)[:, None], dest_idx.shape)
    np.add.at(out, (rows, dest_idx), stream_rates)
    return out


# --- channel-driven model -----------------------------------------------------


@dataclass
class PhyFrameEvaluator:
    """Per-candidate virtual channels of one frame, gathered once and indexed per set."""

    candidates: list[StreamId]
    dest: np.ndarray
    relay: np.ndarray
    num_users: int
    eff: np.ndarray  # (S, M)
    pair_H: np.ndarray  # (S, 2, M)
    u2_sq: np.ndarray  # (S,)
    d2d_power: np.ndarray  # (S, Z)
    weights: np.ndarray  # (Z,)
    regularization: Optional[float] = None
    snr_backoff_db: float = 0.0

    def stream_rates(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.shape[1] == 0:
            return np.zeros(idx.shape)
        return batch_schedule_rates(
            self.eff[idx],
            self.pair_H[idx],
            self.u2_sq[idx],
            self.d2d_power[idx],
            self.weights,
            regularization=self.regularization,
            snr_backoff_db=self.snr_backoff_db,
        )

    def user_rates(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        return per_user(self.stream_rates(idx), self.dest[idx], self.num_users)


class PhyRateModel:
    """
    Expected rates from the base station's channel estimate, averaged over the
    D2D fading grid; delivered rates on the true channel with the precoder
    built from the estimate.
    """

    def __init__(
        self,
        phi: np.ndarray,
        theta: float,
        num_antennas: int,
        grid: Optional[FadingGrid] = None,
        regularization: Optional[float] = None,
        snr_backoff_db: float = 0.0,
        interference_floor_db: float = 0.0,
        relay_candidates: Optional[int] = None,
    ):
        self.phi = np.asarray(phi, dtype=float)
        self.theta = theta
        self.num_users = self.phi.shape[0]
        self.max_streams = num_antennas
        self.grid = grid or fading_grid()
        self.regularization = regularization
        self.snr_backoff_db = snr_backoff_db
        self.noise_scale = 10.0 ** (interference_floor_db / 10.0)
        self.relay_candidates = relay_candidates
        self.connected = self.phi > theta
        np.fill_diagonal(self.connected, False)

    def _relay_shortlist(self, H: np.ndarray, i: int) -> list[int]:
        partners = np.flatnonzero(self.connected[i])
        if self.relay_candidates is None or partners.size <= self.relay_candidates:
            return partners.tolist()
        g_power = self.phi[i, partners][:, None] * self.grid.points[None, :]
        snr = coop_snr(H[i][None, None, :], H[partners][:, None, :], g_power) @ self.grid.weights
        order = sorted(range(partners.size), key=lambda k: (-snr[k], partners[k]))
        return sorted(int(partners[k]) for k in order[: self.relay_candidates])

    def candidate_streams(self, known: ChannelState, cooperation: bool = True) -> list[StreamId]:
        streams = [StreamId(i, i, 1) for i in range(self.num_users)]
        if cooperation:
            for i in range(self.num_users):
                for j in self._relay_shortlist(known.H, i):
                    streams.extend((StreamId(i, j, 1), StreamId(i, j, 2)))
        return list(make_set(streams))

    def evaluator(self, known: ChannelState, candidates: Sequence[StreamId]) -> PhyFrameEvaluator:
        candidates = list(candidates)
        decomposition = decompose_pairs(known.H, [c.pair for c in candidates if not c.is_self])
        M = known.num_antennas
        S, Z = len(candidates), len(self.grid)
        eff = np.zeros((S, M), dtype=complex)
        pair_H = np.zeros((S, 2, M), dtype=complex)
        u2_sq = np.zeros(S)
        d2d_power = np.ones((S, Z))
        for k, sid in enumerate(candidates):
            eff[k], pair_H[k], u2_sq[k] = decomposition.stream_arrays(sid)
            if not sid.is_self:
                d2d_power[k] = self.phi[sid.dest, sid.relay] * self.grid.points
        dest, relay = _index_arrays(candidates)
        return PhyFrameEvaluator(
            candidates=candidates,
            dest=dest,
            relay=relay,
            num_users=self.num_users,
            eff=eff,
            pair_H=pair_H,
            u2_sq=u2_sq,
            d2d_power=d2d_power,
            weights=self.grid.weights,
            regularization=self.regularization,
            snr_backoff_db=self.snr_backoff_db,
        )

    def delivered_rates(self, known: ChannelState, actual: ChannelState, schedule: Sequence[StreamId]) -> np.ndarray:
        """Per-user rates of `schedule` on the true channel with the realized D2D fading."""
        rates = np.zeros(self.num_users)
        schedule = list(schedule)
        if not schedule:
            return rates
        decomposition = decompose_pairs(known.H, [s.pair for s in schedule if not s.is_self])
        truth = decompose_pairs(actual.H, [])
        K, M = len(schedule), actual.num_antennas
        eff_hat = np.zeros((1, K, M), dtype=complex)
        eff = np.zeros((1, K, M), dtype=complex)
        pair_H = np.zeros((1, K, 2, M), dtype=complex)
        u2_sq = np.zeros((1, K))
        power = np.ones((1, K, 1))
        for k, sid in enumerate(schedule):
            eff_hat[0, k], _, _ = decomposition.stream_arrays(sid)
            if sid.is_self:
                eff[0, k], pair_H[0, k], u2_sq[0, k] = truth.stream_arrays(sid)
                continue
            u = decomposition.U[sid.pair][:, sid.stream - 1]
            pair_H[0, k] = np.vstack([actual.H[sid.dest], actual.H[sid.relay]])
            eff[0, k] = u.conj() @ pair_H[0, k]
            u2_sq[0, k] = abs(u[1]) ** 2
            power[0, k, 0] = abs(actual.d2d_gain(sid.dest, sid.relay)) ** 2
        stream = batch_schedule_rates(
            eff,
            pair_H,
            u2_sq,
            power,
            np.ones(1),
            regularization=self.regularization,
            snr_backoff_db=self.snr_backoff_db,
            noise_scale=self.noise_scale,
            precoder_eff=eff_hat,
        )[0]
        for sid, rate in zip(schedule, stream):
            rates[sid.dest] += rate
        return rates


# --- table-driven model -------------------------------------------------------


@dataclass
class TableFrameEvaluator:
    candidates: list[StreamId]
    dest: np.ndarray
    relay: np.ndarray
    lookup: dict[tuple[int, ...], int]  # sorted candidate indices -> table row
    expected: np.ndarray  # (num_sets, n) at the frame's known state

    def user_rates(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        out = np.full((idx.shape[0], self.expected.shape[1]), np.nan)
        for c, row in enumerate(idx):
            s = self.lookup.get(tuple(int(x) for x in row))
            if s is not None:
                out[c] = self.expected[s]
        if idx.shape[1] == 0:
            out[:] = 0.0
        return out


class TableRateModel:
    """Rates R[s][k][z][i] for the listed schedule sets only; anything else is infeasible."""

    def __init__(self, table: RateTable):
        self.table = table
        self.rates = np.asarray(table.rates, dtype=float)  # (S, K, Z, n)
        self.p = np.asarray(table.p, dtype=float)
        self.q = np.asarray(table.q, dtype=float)
        self.sets = table.schedule_sets()
        self.num_users = table.num_users
        self.max_streams = max((len(s) for s in self.sets), default=0)
        self._streams = list(make_set(x for s in self.sets for x in s))
        position = {sid: k for k, sid in enumerate(self._streams)}
        self._lookup = {tuple(sorted(position[x] for x in s)): k for k, s in enumerate(self.sets)}
        if len(self._lookup) != len(self.sets):
            raise ConfigError("rate table lists the same schedule set twice")
        self.expected = np.einsum("skzi,z->ksi", self.rates, self.q)  # (K, S, n)

    def candidate_streams(self, known: int, cooperation: bool = True) -> list[StreamId]:
        if cooperation:
            return list(self._streams)
        return [x for x in self._streams if x.is_self]

    def evaluator(self, known: int, candidates: Sequence[StreamId]) -> TableFrameEvaluator:
        candidates = list(candidates)
        position = {sid: k for k, sid in enumerate(candidates)}
        lookup = {}
        for k, s in enumerate(self.sets):
            if all(x in position for x in s):
                lookup[tuple(sorted(position[x] for x in s))] = k
        dest, relay = _index_arrays(candidates)
        return TableFrameEvaluator(candidates, dest, relay, lookup, self.expected[known])

    def delivered_rates(self, known: int, actual: int, schedule: Sequence[StreamId]) -> np.ndarray:
        if not schedule:
            return np.zeros(self.num_users)
        position = {sid: k for k, sid in enumerate(self._streams)}
        s = self._lookup[tuple(sorted(position[x] for x in schedule))]
        return self.rates[s, known, actual].copy()

    def draw_state(self, rng: np.random.Generator) -> tuple[int, int]:
        """(k, z) with probabilities p_k and q_z."""
        k = int(rng.choice(self.p.size, p=self.p))
        z = int(rng.choice(self.q.size, p=self.q))
        return k, z
