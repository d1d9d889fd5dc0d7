from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .stream import StreamId


@dataclass(frozen=True)
class Distortion:
    """Wyner-Ziv distortion. `value is None` is the unavailable side channel (g = 0)."""

    value: Optional[float]

    @classmethod
    def unavailable(cls) -> "Distortion":
        return cls(None)

    @classmethod
    def zero(cls) -> "Distortion":
        return cls(0.0)

    @property
    def available(self) -> bool:
        return self.value is not None

    def inverse_noise(self) -> float:
        """Second diagonal entry of K^-1 = diag(1, 1/(1+D)); 0 when unavailable."""
        if self.value is None:
            return 0.0
        return 1.0 / (1.0 + self.value)


@dataclass(frozen=True)
class CooperativePair:
    """Destination and relay downlink rows plus the D2D gain g_ij."""

    dest_channel: np.ndarray
    relay_channel: np.ndarray
    d2d_gain: complex
    self_pair: bool = False

    def __post_init__(self):
        if np.shape(self.dest_channel) != np.shape(self.relay_channel) or np.ndim(self.dest_channel) != 1:
            raise ValueError("destination and relay channels must be M-vectors of the same length")

    @property
    def num_antennas(self) -> int:
        return int(np.size(self.dest_channel))

    @property
    def H(self) -> np.ndarray:
        return np.vstack([self.dest_channel, self.relay_channel])


@dataclass(frozen=True)
class EffectiveStream:
    stream_id: StreamId
    eff_vector: np.ndarray  # h~ as a row: u_d^* H
    noise_var: Optional[float]  # None: stream unusable (dead side channel)
    singular_value: float
    left_column: np.ndarray  # u_d, length 2

    @property
    def usable(self) -> bool:
        return self.noise_var is not None


@dataclass(frozen=True)
class RateReport:
    r_mimo: float
    stream_rates: tuple[float, float]
    cutset: float
    gap: float

    @property
    def within_bound(self) -> bool:
        return -1e-9 <= self.gap <= 2.0 + 1e-9
