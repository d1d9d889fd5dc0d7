from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .stream import ScheduleSet


@dataclass(frozen=True)
class FrameRecord:
    t: int
    schedule: ScheduleSet
    f_value: float
    eligible_pair_count: int
    delivered: np.ndarray  # (n,)
    arrivals: tuple[tuple[int, int], ...]
    served: tuple[tuple[int, int], ...]

    def as_record(self, drop: Optional[int] = None) -> dict:
        out = {
            "t": self.t,
            "schedule": [x.as_list() for x in self.schedule],
            "f_value": self.f_value,
            "eligible_pair_count": self.eligible_pair_count,
        }
        if drop is not None:
            out = {"drop": drop, **out}
        return out


@dataclass
class DropResult:
    throughput: np.ndarray  # (n,) long-run average delivered rate
    relay_fraction: np.ndarray  # (n,)
    stream_counts: np.ndarray  # (T,)
    drift_ok: bool
    limsup_ok: bool
    clique_loads: Optional[np.ndarray] = None  # (T, nQ) when kept
    clique_sizes: Optional[np.ndarray] = None
    clique_p_min: Optional[np.ndarray] = None
    records: list[FrameRecord] = field(default_factory=list)
    queue_trace: Optional[pd.DataFrame] = None

    @property
    def num_users(self) -> int:
        return int(self.throughput.size)

    @property
    def mean_streams(self) -> float:
        return float(np.mean(self.stream_counts)) if self.stream_counts.size else 0.0


@dataclass(frozen=True)
class CdfSummary:
    """Pooled sample with linear-interpolation quantiles (inclusive endpoints)."""

    values: np.ndarray

    @classmethod
    def from_values(cls, values) -> "CdfSummary":
        return cls(np.sort(np.asarray(values, dtype=float).ravel()))

    def quantile(self, q: float) -> float:
        if self.values.size == 0:
            return float("nan")
        return float(np.quantile(self.values, q, method="linear"))

    @property
    def p5(self) -> float:
        return self.quantile(0.05)

    @property
    def median(self) -> float:
        return self.quantile(0.5)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values.size else float("nan")

    def to_frame(self) -> pd.DataFrame:
        N = self.values.size
        return pd.DataFrame({"value": self.values, "cdf": np.arange(1, N + 1) / max(N, 1)})
