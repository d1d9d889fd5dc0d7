from __future__ import annotations

import math
from typing import List, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


class NetworkConfig(BaseModel):
    """Single-cell network parameters (JSON keys as listed)."""

    n: int = Field(25, ge=1, description="Number of users")
    M: int = Field(8, ge=1, description="Base station antennas")
    cell_radius_m: float = Field(1000.0, gt=0, description="Cell radius a")
    cluster_std_m: float = Field(20.0, ge=0, description="Per-axis std of users around a cluster center")
    cluster_intensity: float = Field(
        5.0 / (math.pi * 1000.0**2), ge=0, description="Cluster centers per square meter"
    )
    rho: float = Field(1.0, ge=0, description="Downlink path gain")
    num_paths: int = Field(2, ge=1, description="Multipath components per user")
    antenna_spacing: float = Field(0.5, ge=0, description="Antenna spacing in wavelengths")
    phi0: float = Field(8.0e5, ge=0, description="D2D gain at 1 m")
    pathloss_exp: float = Field(3.0, gt=2, description="D2D path-loss exponent c")
    connect_threshold: float = Field(1.0, ge=0, description="Connectivity threshold theta on phi")
    availability: Union[float, List[List[float]]] = Field(1.0, description="p_ij, scalar or n x n")
    seed: int = Field(0, ge=0, lt=2**64, description="Root random seed")

    # Optional keys; defaults keep rho_i = rho for every user
    bs_pathloss_exp: float = Field(0.0, ge=0, description="Downlink distance exponent eta")
    bs_ref_distance_m: float = Field(1.0, gt=0, description="Reference distance for the downlink exponent")
    bs_shadowing_db: float = Field(0.0, ge=0, description="Std of per-user log-normal downlink shadowing in dB")
    min_distance_m: float = Field(0.1, gt=0, description="Clamp on D2D distance")

    class Config:
        extra = "forbid"

    @field_validator("availability")
    @classmethod
    def check_availability(cls, value):
        values = np.atleast_1d(np.asarray(value, dtype=float))
        if np.any(values <= 0) or np.any(values > 1):
            raise ValueError("availability must lie in (0, 1]")
        return value

    @model_validator(mode="after")
    def check_geometry(self):
        if self.cluster_std_m >= self.cell_radius_m:
            raise ValueError("cluster_std_m must be smaller than cell_radius_m")
        if not isinstance(self.availability, (int, float)):
            shape = np.asarray(self.availability).shape
            if shape != (self.n, self.n):
                raise ValueError(f"availability matrix must be {self.n}x{self.n}, got {shape}")
        return self

    def availability_matrix(self) -> np.ndarray:
        if isinstance(self.availability, (int, float)):
            p = np.full((self.n, self.n), float(self.availability))
        else:
            p = np.asarray(self.availability, dtype=float)
        return p

    @property
    def mean_clusters(self) -> float:
        return self.cluster_intensity * math.pi * self.cell_radius_m**2


def large_cell(**overrides) -> NetworkConfig:
    """Large-cell column: n=25, sigma=20 m, 5 clusters on average, 8 dB downlink shadowing."""
    base = dict(
        n=25,
        cell_radius_m=1000.0,
        cluster_std_m=20.0,
        cluster_intensity=5.0 / (math.pi * 1000.0**2),
        bs_shadowing_db=8.0,
    )
    base.update(overrides)
    return NetworkConfig(**base)


def small_cell(**overrides) -> NetworkConfig:
    """Small-cell column: n=10, sigma=10 m, 3 clusters on average."""
    radius = 500.0 / math.sqrt(3.0)
    base = dict(
        n=10,
        cell_radius_m=radius,
        cluster_std_m=10.0,
        cluster_intensity=3.0 / (math.pi * radius**2),
    )
    base.update(overrides)
    return NetworkConfig(**base)

