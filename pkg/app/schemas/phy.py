"""
PHY schemas: capacity-gap requests and reports.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.models import CooperativePair

# complex numbers travel as [re, im]
ComplexPair = List[float]


def to_complex(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape[-1] != 2:
        raise ValueError("complex entries are [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


class GapCheckRequest(BaseModel):
    """Either an explicit 2 x M channel with D2D gain g, or a random batch."""

    H: Optional[List[List[ComplexPair]]] = Field(None, description="2 x M channel, rows destination then relay")
    g: Optional[ComplexPair] = None
    trials: int = Field(100, ge=1, le=100_000)
    seed: int = Field(0, ge=0)
    M: List[int] = Field(default_factory=lambda: [2, 4, 8])

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def check_instance(self):
        if (self.H is None) != (self.g is None):
            raise ValueError("H and g must be given together")
        if self.H is not None:
            if len(self.H) != 2 or len({len(row) for row in self.H}) != 1 or not self.H[0]:
                raise ValueError("H must be 2 x M with M >= 1")
            to_complex(self.H)
            to_complex(self.g)
        if any(m < 1 for m in self.M):
            raise ValueError("antenna counts must be positive")
        return self

    def channel(self) -> CooperativePair:
        H = to_complex(self.H)
        return CooperativePair(H[0], H[1], complex(to_complex(self.g)))


class GapRow(BaseModel):
    seed: int
    M: int
    r_mimo: float
    cutset: float
    gap: float
    stream_rates: List[float]


class GapCheckResponse(BaseModel):
    rows: List[GapRow]
    max_gap: float
    min_gap: float
    within_bound: bool
