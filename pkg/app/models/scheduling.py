from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

WARM_START_RATE = 1e-3


class AveragingMode(str, enum.Enum):
    RUNNING = "running"
    EWMA = "ewma"


class SchedulerKind(str, enum.Enum):
    EXHAUSTIVE = "exhaustive"
    GREEDY = "greedy"
    BARRIER = "barrier"


@dataclass(frozen=True)
class UtilityParams:
    kappa: float = 0.0

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")


@dataclass(frozen=True)
class FadingGrid:
    """Finite alphabet for the unknown |zeta|^2 with probabilities q_z."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.points.shape != self.weights.shape or self.points.ndim != 1:
            raise ValueError("grid points and weights must be 1-D and aligned")
        if np.any(self.weights <= 0) or not np.isclose(self.weights.sum(), 1.0, atol=1e-12):
            raise ValueError("grid weights must be positive and sum to one")

    def __len__(self) -> int:
        return int(self.points.size)


@dataclass
class UserState:
    """Per-user throughput and relaying averages for all n users.

    Running mode keeps exact sums; EWMA mode keeps the filtered values.
    """

    mode: AveragingMode
    rate_sum: np.ndarray
    relay_count: np.ndarray
    r: np.ndarray
    beta: np.ndarray
    frame: int = 0
    window: int = 50
    warm_start: float = WARM_START_RATE

    @classmethod
    def initial(
        cls,
        n: int,
        mode: AveragingMode = AveragingMode.RUNNING,
        window: int = 50,
        warm_start: float = WARM_START_RATE,
    ) -> "UserState":
        return cls(
            mode=AveragingMode(mode),
            rate_sum=np.zeros(n),
            relay_count=np.zeros(n, dtype=np.int64),
            r=np.full(n, warm_start),
            beta=np.zeros(n),
            frame=0,
            window=window,
            warm_start=warm_start,
        )

    @property
    def num_users(self) -> int:
        return int(self.r.size)

    def beta_for_gradient(self) -> np.ndarray:
        """Relaying fractions kept strictly below one (t/(t+1) cap)."""
        cap = self.frame / (self.frame + 1.0)
        return np.minimum(self.beta, cap)


@dataclass
class CliqueState:
    """Clique loads beta_Q(t) = N_Q / t with N_Q = sum of A-counts / p_ij.

    Numerators are exact rationals so the closed constraint beta_Q <= 1 is
    decided without rounding.
    """

    members: list[list[int]]  # conflict-vertex indices per clique
    weights: list[Fraction]  # 1 / p per conflict vertex
    numerators: list[Fraction] = field(default_factory=list)
    frame: int = 0
    by_vertex: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.numerators:
            self.numerators = [Fraction(0)] * len(self.members)
        if not self.by_vertex:
            for q, idx in enumerate(self.members):
                for v in idx:
                    self.by_vertex.setdefault(v, []).append(q)

    @property
    def size(self) -> int:
        return len(self.members)

    def record(self, arrived: list[int], frame: int) -> None:
        for v in arrived:
            for q in self.by_vertex.get(v, ()):
                self.numerators[q] += self.weights[v]
        self.frame = frame

    def exact_loads(self) -> list[Fraction]:
        if self.frame == 0:
            return [Fraction(0)] * self.size
        return [num / self.frame for num in self.numerators]

    def loads(self) -> np.ndarray:
        if self.frame == 0:
            return np.zeros(self.size)
        return np.array([float(num) for num in self.numerators]) / self.frame

    def violated(self) -> np.ndarray:
        """beta_Q(t) > 1, decided exactly."""
        return np.array([num > self.frame for num in self.numerators], dtype=bool)


@dataclass(frozen=True)
class ScheduleDecision:
    """One frame's choice, as exported in the JSON-lines trace."""

    schedule: tuple
    f_value: float
    eligible_pair_count: int

    def as_record(self, frame: int) -> dict:
        return {
            "t": frame,
            "schedule": [x.as_list() for x in self.schedule],
            "f_value": self.f_value,
            "eligible_pair_count": self.eligible_pair_count,
        }
