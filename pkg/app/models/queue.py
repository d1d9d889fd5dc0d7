from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class QueueMatrix:
    Q: np.ndarray  # (n, n) int64, diagonal unused
    frame: int = 0

    def __post_init__(self):
        if np.any(self.Q < 0):
            raise ValueError("queue lengths are non-negative")

    @classmethod
    def empty(cls, n: int) -> "QueueMatrix":
        return cls(np.zeros((n, n), dtype=np.int64), 0)


@dataclass(frozen=True)
class ServiceDecision:
    mu: np.ndarray  # (n, n) {0,1}
    J: np.ndarray  # (n, n) {0,1}

    def served(self, B: np.ndarray) -> list[tuple[int, int]]:
        on = (self.mu * self.J * B) == 1
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(on))]


@dataclass(frozen=True)
class ArrivalRecord:
    """Arrival counts per pair; beta_ij(t) = counts_ij / t held exactly."""

    counts: np.ndarray  # (n, n) int64
    frame: int = 0

    @classmethod
    def empty(cls, n: int) -> "ArrivalRecord":
        return cls(np.zeros((n, n), dtype=np.int64), 0)

    def rate(self, i: int, j: int) -> Fraction:
        if self.frame == 0:
            return Fraction(0)
        return Fraction(int(self.counts[i, j]), self.frame)

    def rates(self) -> np.ndarray:
        if self.frame == 0:
            return np.zeros(self.counts.shape)
        return self.counts / self.frame
