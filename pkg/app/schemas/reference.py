"""
Reference solver schemas: rate tables and solve reports.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.models import ScheduleSet, parse_set

Triple = List[int]
PairEntry = List[int]


class LinkAvailability(BaseModel):
    i: int = Field(..., ge=0)
    j: int = Field(..., ge=0)
    p: float = Field(..., gt=0, le=1)


class RateTable(BaseModel):
    """
    Fixed-rate instance: rates[s][k][z][i] is the rate user i receives when
    set s is scheduled in known state k and fading state z.
    """

    num_users: int = Field(..., ge=1)
    sets: List[List[Triple]] = Field(..., min_length=1, description="Schedule sets as [[i, j, d], ...]")
    p: List[float] = Field(..., min_length=1, description="Known-state probabilities p_k")
    q: List[float] = Field(..., min_length=1, description="Fading-state probabilities q_z")
    rates: List[List[List[List[float]]]]
    kappa: float = Field(0.0, ge=0)
    cliques: Optional[List[List[PairEntry]]] = Field(
        None, description="Maximal cliques as lists of [i, j]; default is one clique of every ordered pair"
    )
    availability: List[LinkAvailability] = Field(default_factory=list, description="p_ij overrides (default 1)")

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def check_shapes(self):
        for name, probs in (("p", self.p), ("q", self.q)):
            arr = np.asarray(probs, dtype=float)
            if np.any(arr <= 0) or not np.isclose(arr.sum(), 1.0, atol=1e-9):
                raise ValueError(f"{name} must be positive and sum to one")
        rates = np.asarray(self.rates, dtype=float)
        expected = (len(self.sets), len(self.p), len(self.q), self.num_users)
        if rates.shape != expected:
            raise ValueError(f"rates must have shape {expected}, got {rates.shape}")
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise ValueError("rates must be finite and non-negative")
        for raw in self.sets:
            if not raw:
                raise ValueError("schedule sets must be non-empty (idling is implicit)")
            for triple in raw:
                if len(triple) != 3 or max(triple[:2]) >= self.num_users or min(triple) < 0:
                    raise ValueError(f"bad stream {triple}")
            parse_set(raw)
        for entry in self.availability:
            if entry.i == entry.j or max(entry.i, entry.j) >= self.num_users:
                raise ValueError(f"bad availability pair ({entry.i}, {entry.j})")
        return self

    def schedule_sets(self) -> list[ScheduleSet]:
        return [parse_set(raw) for raw in self.sets]

    def ordered_pairs(self) -> list[tuple[int, int]]:
        n = self.num_users
        return [(i, j) for i in range(n) for j in range(n) if i != j]

    def clique_pairs(self) -> list[list[tuple[int, int]]]:
        if self.cliques is None:
            pairs = self.ordered_pairs()
            return [pairs] if pairs else []
        return [[(int(i), int(j)) for i, j in clique] for clique in self.cliques]

    def availability_map(self) -> dict[tuple[int, int], float]:
        out = {pair: 1.0 for pair in self.ordered_pairs()}
        for entry in self.availability:
            out[(entry.i, entry.j)] = entry.p
        return out


class SolveRequest(BaseModel):
    table: RateTable
    barrier_index: Optional[float] = Field(None, ge=1, description="Solve the barrier problem instead")
    tolerance: float = Field(1e-6, gt=0)
    max_iter: int = Field(5000, ge=1)

    class Config:
        extra = "forbid"


class SolveReport(BaseModel):
    opt_value: float
    alpha: List[List[float]] = Field(..., description="Mass per (set s, known state k)")
    rates: List[float]
    relay_fractions: List[float]
    clique_loads: List[float]
    iterations: int
    fw_gap: float
    converged: bool
    barrier_index: Optional[float] = None
