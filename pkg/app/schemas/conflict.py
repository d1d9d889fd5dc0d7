"""
Conflict-graph schemas: stability-check input and verdicts.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

Pair = Tuple[int, int]


class PairLoad(BaseModel):
    pair: Pair
    beta: float = Field(..., ge=0)
    p: float = Field(1.0, gt=0, le=1)


class StabilityCheckRequest(BaseModel):
    """
    The conflict graph comes from a path-loss map (phi, theta) or is given as
    an explicit edge list over ordered pairs.
    """

    phi: Optional[List[List[float]]] = None
    theta: float = Field(1.0, ge=0)
    vertices: Optional[List[Pair]] = None
    edges: Optional[List[Tuple[Pair, Pair]]] = None
    loads: List[PairLoad] = Field(default_factory=list)
    brute_force: bool = True

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def check_graph(self):
        explicit = self.vertices is not None or self.edges is not None
        if self.phi is not None and explicit:
            raise ValueError("give either phi or an explicit vertex/edge list, not both")
        if self.phi is None and self.vertices is None:
            raise ValueError("graph needs phi or vertices")
        if self.phi is not None:
            n = len(self.phi)
            if any(len(row) != n for row in self.phi):
                raise ValueError("phi must be square")
        if self.vertices is not None:
            known = set(map(tuple, self.vertices))
            for a, b in self.edges or []:
                if tuple(a) not in known or tuple(b) not in known:
                    raise ValueError(f"edge {a}-{b} uses an unknown vertex")
        seen = set()
        for entry in self.loads:
            if entry.pair in seen:
                raise ValueError(f"duplicate load entry for {entry.pair}")
            seen.add(entry.pair)
        return self


class CliqueReport(BaseModel):
    members: List[Pair]
    load: float
    within: bool


class StabilityCheckResponse(BaseModel):
    num_vertices: int
    num_edges: int
    fill_edges: int
    chordal: bool
    cliques: List[CliqueReport]
    inner_bound: bool
    brute_force: Optional[bool] = None
