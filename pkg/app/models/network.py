from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Geometry:
    cluster_centers: np.ndarray  # (C, 2) meters
    user_positions: np.ndarray  # (n, 2) meters
    user_cluster: np.ndarray  # (n,) cluster index per user

    @property
    def num_users(self) -> int:
        return int(self.user_positions.shape[0])

    @property
    def num_clusters(self) -> int:
        return int(self.cluster_centers.shape[0])


@dataclass(frozen=True)
class DropChannels:
    """Per-drop static quantities: D2D path loss map and per-user downlink gain."""

    phi: np.ndarray  # (n, n) symmetric, diagonal zero
    rho: np.ndarray  # (n,)


@dataclass(frozen=True)
class ChannelState:
    H: np.ndarray  # (n, M) complex, row i is h_i
    phi: np.ndarray  # (n, n)
    Z: np.ndarray  # (n, n) complex, symmetric
    B: np.ndarray  # (n, n) int {0, 1}
    frame: int = 0

    @property
    def num_users(self) -> int:
        return int(self.H.shape[0])

    @property
    def num_antennas(self) -> int:
        return int(self.H.shape[1])

    def d2d_gain(self, i: int, j: int) -> complex:
        """g_ij = sqrt(phi_ij) * zeta_ij."""
        if i == j:
            return 0j
        return complex(np.sqrt(self.phi[i, j]) * self.Z[i, j])

    def with_estimate(self, H_hat: np.ndarray) -> "ChannelState":
        return ChannelState(H=H_hat, phi=self.phi, Z=self.Z, B=self.B, frame=self.frame)
