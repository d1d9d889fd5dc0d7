"""
Simulation schemas: experiment configuration and summaries.
"""

from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from app.models import AveragingMode, SchedulerKind
from app.schemas.network import NetworkConfig, large_cell


class SchedulerConfig(BaseModel):
    kind: SchedulerKind = SchedulerKind.GREEDY
    barrier_index: Optional[float] = Field(None, ge=1, description="nB for the barrier policy")
    search: SchedulerKind = Field(SchedulerKind.EXHAUSTIVE, description="Set search used by the barrier policy")

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def check_barrier(self):
        if self.kind == SchedulerKind.BARRIER and self.barrier_index is None:
            raise ValueError("barrier scheduler needs barrier_index")
        if self.search == SchedulerKind.BARRIER:
            raise ValueError("search must be exhaustive or greedy")
        return self


class SimConfig(BaseModel):
    """Frame-loop simulation configuration; defaults follow the large-cell setup."""

    network: NetworkConfig = Field(default_factory=large_cell)
    frames: int = Field(5000, ge=1, description="T_total")
    ewma_window: int = Field(50, ge=1, description="T_w")
    kappa: float = Field(7.0, ge=0)
    greedy_eps: float = Field(0.01, gt=0)
    max_streams: Optional[int] = Field(None, ge=1, description="N; defaults to M")
    scheduler: SchedulerConfig = Field(default_factory=SchedulerConfig)
    estimation_error_scale: float = Field(0.0, ge=0)
    snr_backoff_db: float = 3.0
    drops: int = Field(1, ge=1)
    interference_floor_db: float = 0.0

    cooperation: bool = True
    flow_control: bool = True
    averaging: AveragingMode = AveragingMode.EWMA
    relay_candidates: Optional[int] = Field(None, ge=1, description="Best relays kept per destination")
    grid_points: int = Field(16, ge=1, description="Fading grid size")
    burn_in: int = Field(1000, ge=1, description="t_burn for the load limsup check")

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def check_frames(self):
        if self.frames < self.ewma_window:
            raise ValueError("frames must be at least ewma_window")
        return self


class QuantileSummary(BaseModel):
    p5: float
    median: float
    mean: float


class RunSummary(BaseModel):
    drops: int
    users: int
    throughput: QuantileSummary
    relay_fraction: QuantileSummary
    total_relay_load: float
    mean_streams: float
    drift_ok: bool
    limsup_ok: bool


class SimulationSummary(BaseModel):
    cooperative: RunSummary
    baseline: Optional[RunSummary] = None
    gains: Optional[Dict[str, float]] = None


class ScalingRow(BaseModel):
    n: int
    coop_median: float
    noncoop_median: float
    coop_threshold: float
    noncoop_threshold: float
    coop_above_threshold: float
    noncoop_below_threshold: float


class ScalingRequest(BaseModel):
    n_list: List[int] = Field(default_factory=lambda: [10, 50, 250, 1250])
    trials: int = Field(50, ge=1)
    network: NetworkConfig = Field(default_factory=lambda: NetworkConfig(M=8, rho=1.0, num_paths=2))
    gamma: float = Field(0.5, gt=0, lt=1)

    class Config:
        extra = "forbid"
