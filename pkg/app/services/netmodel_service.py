"""
Network Model Service: geometry, downlink channels, D2D gains and availability.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from app.core.exceptions import ConfigError
from app.models import ChannelState, DropChannels, Geometry
from app.schemas.network import NetworkConfig

logger = logging.getLogger(__name__)

MAX_CLUSTER_RESAMPLES = 10_000


def complex_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian, E|x|^2 = 1."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


def uniform_disc(count: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, count))
    angle = rng.uniform(0.0, 2.0 * np.pi, count)
    return np.column_stack([r * np.cos(angle), r * np.sin(angle)])


def place_users(config: NetworkConfig, rng: np.random.Generator) -> Geometry:
    """
    Poisson cluster centers over the cell disc, users Gaussian around a
    uniformly chosen center.
    """
    mean_clusters = config.mean_clusters
    count = int(rng.poisson(mean_clusters))
    resamples = 0
    while count == 0:
        resamples += 1
        if resamples > MAX_CLUSTER_RESAMPLES:
            count = 1
            break
        count = int(rng.poisson(mean_clusters))
    if resamples:
        logger.info("Poisson draw returned no cluster center; resampled %d time(s)", resamples)

    centers = uniform_disc(count, config.cell_radius_m, rng)
    assignment = rng.integers(0, count, size=config.n)
    offsets = config.cluster_std_m * rng.standard_normal((config.n, 2))
    positions = centers[assignment] + offsets
    return Geometry(cluster_centers=centers, user_positions=positions, user_cluster=assignment)


def steering_vector(theta: float, M: int, spacing: float) -> np.ndarray:
    """e(theta)_k = exp(-j 2 pi k spacing cos theta), k = 0..M-1."""
    k = np.arange(M)
    return np.exp(-2j * np.pi * k * spacing * np.cos(theta))


def steering_matrix(thetas: np.ndarray, M: int, spacing: float) -> np.ndarray:
    """Steering vectors for an array of angles, shape thetas.shape + (M,)."""
    k = np.arange(M)
    return np.exp(-2j * np.pi * spacing * np.cos(thetas)[..., None] * k)


def downlink_channel(
    user_idx: int,
    config: NetworkConfig,
    rng: np.random.Generator,
    rho: float | None = None,
) -> np.ndarray:
    """h = sqrt(rho) * sum_k xi_k e(theta_k) over num_paths paths."""
    del user_idx  # draws are i.i.d. across users
    gain = config.rho if rho is None else rho
    xi = complex_normal(rng, config.num_paths)
    thetas = rng.uniform(0.0, 2.0 * np.pi, config.num_paths)
    paths = steering_matrix(thetas, config.M, config.antenna_spacing)
    return np.sqrt(gain) * (xi @ paths)


def downlink_channels(rho: np.ndarray, config: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    """All n users' channels at once, rows h_i."""
    n = rho.size
    xi = complex_normal(rng, (n, config.num_paths))
    thetas = rng.uniform(0.0, 2.0 * np.pi, (n, config.num_paths))
    paths = steering_matrix(thetas, config.M, config.antenna_spacing)
    return np.sqrt(rho)[:, None] * np.einsum("np,npm->nm", xi, paths)


def d2d_pathloss(distance, config: NetworkConfig):
    """phi = phi0 * d^-c, distance clamped below at config.min_distance_m."""
    d = np.asarray(distance, dtype=float)
    if np.any(d < config.min_distance_m):
        logger.debug("clamping %d D2D distance(s) to %.3f m", int(np.sum(d < config.min_distance_m)), config.min_distance_m)
    d = np.maximum(d, config.min_distance_m)
    phi = config.phi0 * d ** (-config.pathloss_exp)
    return float(phi) if phi.ndim == 0 else phi


def pathloss_map(positions: np.ndarray, config: NetworkConfig) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    phi = d2d_pathloss(dist, config)
    np.fill_diagonal(phi, 0.0)
    return phi


def user_path_gains(
    geometry: Geometry, config: NetworkConfig, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """rho_i = rho * min(1, (d_ref / d_i)^eta) * 10^(X_i / 10), X_i ~ N(0, s^2) dB.

    eta = 0 and s = 0 give rho for every user. Shadowing needs ``rng``.
    """
    n = geometry.num_users
    if config.bs_pathloss_exp == 0:
        gains = np.full(n, config.rho)
    else:
        dist = np.linalg.norm(geometry.user_positions, axis=1)
        ratio = config.bs_ref_distance_m / np.maximum(dist, config.bs_ref_distance_m)
        gains = config.rho * ratio**config.bs_pathloss_exp
    if config.bs_shadowing_db > 0:
        if rng is None:
            raise ConfigError("bs_shadowing_db > 0 needs a random generator")
        gains = gains * 10.0 ** (rng.normal(0.0, config.bs_shadowing_db, size=n) / 10.0)
    return gains


def drop_channels(
    geometry: Geometry, config: NetworkConfig, rng: Optional[np.random.Generator] = None
) -> DropChannels:
    return DropChannels(
        phi=pathloss_map(geometry.user_positions, config),
        rho=user_path_gains(geometry, config, rng),
    )


def draw_d2d_state(phi: np.ndarray, p, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric fading Z (zeta_ij = zeta_ji) and Bernoulli(p_ij) availability B."""
    n = phi.shape[0]
    raw = complex_normal(rng, (n, n))
    upper = np.triu(raw, 1)
    Z = upper + upper.T
    p = np.broadcast_to(np.asarray(p, dtype=float), (n, n))
    B = (rng.uniform(size=(n, n)) < p).astype(np.int64)
    np.fill_diagonal(B, 1)
    return Z, B


def draw_channel_state(
    drop: DropChannels,
    config: NetworkConfig,
    rng: np.random.Generator,
    frame: int,
) -> ChannelState:
    H = downlink_channels(drop.rho, config, rng)
    Z, B = draw_d2d_state(drop.phi, config.availability_matrix(), rng)
    return ChannelState(H=H, phi=drop.phi, Z=Z, B=B, frame=frame)


class NetworkModel:
    """Owns one drop: geometry, static maps and the per-frame channel stream."""

    def __init__(self, config: NetworkConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.geometry = place_users(config, rng)
        self.drop = drop_channels(self.geometry, config, rng)

    def next_state(self, frame: int) -> ChannelState:
        return draw_channel_state(self.drop, self.config, self.rng, frame)
