"""
Simulation Service: the frame loop, drops and their aggregation, sweeps,
the SNR-scaling experiment and the scheduler-optimality certificate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from app.core.config import settings
from app.core.exceptions import DomainError
from app.models import (
    AveragingMode,
    CdfSummary,
    DropResult,
    FrameRecord,
    ScheduleSet,
    SchedulerKind,
    UserState,
    UtilityParams,
)
from app.schemas.network import NetworkConfig
from app.schemas.reference import RateTable
from app.schemas.simulation import QuantileSummary, RunSummary, ScalingRow, SimConfig, SimulationSummary
from app.services.conflict_service import stability_cliques
from app.services.netmodel_service import (
    NetworkModel,
    complex_normal,
    downlink_channels,
    draw_d2d_state,
    pathloss_map,
    uniform_disc,
)
from app.services.phy_service import coop_snr, coop_snr_lower_bound, fading_grid
from app.services.queue_service import QueueService
from app.services.rate_model_service import PhyRateModel, TableRateModel
from app.services.reference_service import ReferenceProblem, solve_opt3
from app.services.scheduler_service import Scheduler, build_clique_state, total_utility, update_user_states

logger = logging.getLogger(__name__)

OPTIMALITY_TOLERANCE = 0.05


def estimate_channels(H: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    """H^ = H + CN noise with per-entry variance scale * ||h_i||^2 / M."""
    if scale == 0:
        return H.copy()
    M = H.shape[1]
    std = np.sqrt(scale * np.sum(np.abs(H) ** 2, axis=1) / M)
    return H + std[:, None] * complex_normal(rng, H.shape)


class DropSimulation:
    """One drop: static geometry, the scheduler and relay queues stepped frame by frame."""

    def __init__(
        self,
        config: SimConfig,
        rng: np.random.Generator,
        cooperation: Optional[bool] = None,
        keep_trace: bool = False,
        keep_clique_loads: bool = False,
    ):
        self.config = config
        self.rng = rng
        self.cooperation = config.cooperation if cooperation is None else cooperation
        self.keep_trace = keep_trace
        self.keep_clique_loads = keep_clique_loads

        net = config.network
        self.network = NetworkModel(net, rng)
        phi = self.network.drop.phi
        self.conflict, _, cliques = stability_cliques(phi, net.connect_threshold)
        availability = net.availability_matrix()
        self.clique_state = build_clique_state(cliques, self.conflict.vertices, availability)
        self.clique_sizes = np.array([len(m) for m in self.clique_state.members], dtype=np.int64)
        self.clique_wmax = [max((self.clique_state.weights[v] for v in m), default=Fraction(1)) for m in self.clique_state.members]

        self.model = PhyRateModel(
            phi,
            net.connect_threshold,
            net.M,
            grid=fading_grid(config.grid_points),
            snr_backoff_db=config.snr_backoff_db,
            interference_floor_db=config.interference_floor_db,
            relay_candidates=config.relay_candidates,
        )
        self.scheduler = Scheduler(
            self.model,
            UtilityParams(config.kappa),
            kind=config.scheduler.kind,
            max_streams=config.max_streams,
            greedy_eps=config.greedy_eps,
            barrier_index=config.scheduler.barrier_index,
            barrier_search=config.scheduler.search,
            clique_state=self.clique_state,
            vertices=self.conflict.vertices,
            flow_control=config.flow_control,
            cooperation=self.cooperation,
        )
        self.queues = QueueService(self.conflict, net.n, keep_trace=keep_trace)
        self.users = UserState.initial(net.n, config.averaging, config.ewma_window)
        self.drift_ok = True
        self.limsup_ok = True

    def _check_loads(self, violated_before: np.ndarray, arrived_vertices: Sequence[int], t: int) -> None:
        """Exact drift recursion and post-burn-in bound for every clique that received arrivals."""
        touched = {q for v in arrived_vertices for q in self.clique_state.by_vertex.get(v, ())}
        for q in touched:
            if violated_before[q]:
                self.drift_ok = False
            if t > self.config.burn_in:
                bound = 1 + int(self.clique_sizes[q]) * self.clique_wmax[q] / self.config.burn_in
                if self.clique_state.numerators[q] > t * bound:
                    self.limsup_ok = False

    def run_frame(self, t: int) -> FrameRecord:
        state = self.network.next_state(t)
        estimate = state.with_estimate(estimate_channels(state.H, self.config.estimation_error_scale, self.rng))
        decision = self.scheduler.schedule(estimate, self.users)
        delivered = self.model.delivered_rates(estimate, state, decision.schedule)

        violated_before = self.clique_state.violated()
        arrived = self.scheduler.commit(decision.schedule, t)
        self._check_loads(violated_before, [self.scheduler.pair_vertex[p] for p in arrived], t)

        n = state.num_users
        A = np.zeros((n, n), dtype=np.int64)
        for i, j in arrived:
            A[i, j] = 1
        service = self.queues.step(A, state.B, t)
        self.users = update_user_states(self.users, delivered, decision.schedule, t)
        return FrameRecord(
            t=t,
            schedule=decision.schedule,
            f_value=decision.f_value,
            eligible_pair_count=decision.eligible_pair_count,
            delivered=delivered,
            arrivals=tuple(arrived),
            served=tuple(service.served(state.B)),
        )

    def run(self) -> DropResult:
        T = self.config.frames
        counts = np.zeros(T, dtype=np.int64)
        loads = np.zeros((T, self.clique_state.size)) if self.keep_clique_loads else None
        records = []
        for t in range(1, T + 1):
            record = self.run_frame(t)
            counts[t - 1] = len(record.schedule)
            if loads is not None:
                loads[t - 1] = self.clique_state.loads()
            if self.keep_trace:
                records.append(record)
        if not self.drift_ok:
            logger.error("relay load drift recursion violated in this drop")
        weights = [float(w) for w in self.clique_wmax]
        return DropResult(
            throughput=self.users.rate_sum / T,
            relay_fraction=self.users.relay_count / T,
            stream_counts=counts,
            drift_ok=self.drift_ok,
            limsup_ok=self.limsup_ok,
            clique_loads=loads,
            clique_sizes=self.clique_sizes,
            clique_p_min=1.0 / np.array(weights) if weights else np.zeros(0),
            records=records,
            queue_trace=self.queues.trace_frame() if self.keep_trace else None,
        )


def run_drop(
    config: SimConfig,
    seed: np.random.SeedSequence,
    cooperation: Optional[bool] = None,
    keep_trace: bool = False,
    keep_clique_loads: bool = False,
    index: int = 0,
) -> DropResult:
    """Independent geometry per drop; the same seed replays the same channels."""
    rng = np.random.default_rng(seed)
    mode = "cooperative" if (config.cooperation if cooperation is None else cooperation) else "baseline"
    logger.info("drop %d (%s): %d users, %d frames", index, mode, config.network.n, config.frames)
    return DropSimulation(config, rng, cooperation, keep_trace, keep_clique_loads).run()


def drop_seeds(config: SimConfig) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(config.network.seed).spawn(config.drops)


def run_drops(
    config: SimConfig,
    cooperation: Optional[bool] = None,
    keep_trace: bool = False,
    keep_clique_loads: bool = False,
    threads: Optional[int] = None,
) -> list[DropResult]:
    jobs = threads or settings.threads
    seeds = drop_seeds(config)
    if jobs == 1 or len(seeds) == 1:
        return [run_drop(config, s, cooperation, keep_trace, keep_clique_loads, k) for k, s in enumerate(seeds)]
    return Parallel(n_jobs=jobs)(
        delayed(run_drop)(config, s, cooperation, keep_trace, keep_clique_loads, k) for k, s in enumerate(seeds)
    )


def aggregate(results: Iterable[DropResult]) -> dict[str, CdfSummary]:
    """Pool user metrics across drops."""
    results = list(results)
    return {
        "throughput": CdfSummary.from_values(np.concatenate([r.throughput for r in results])),
        "relay_fraction": CdfSummary.from_values(np.concatenate([r.relay_fraction for r in results])),
    }


def stream_histogram(results: Iterable[DropResult]) -> pd.DataFrame:
    counts = np.concatenate([r.stream_counts for r in results])
    values, freq = np.unique(counts, return_counts=True)
    return pd.DataFrame({"streams": values, "frames": freq, "fraction": freq / max(counts.size, 1)})


def _quantiles(cdf: CdfSummary) -> QuantileSummary:
    return QuantileSummary(p5=cdf.p5, median=cdf.median, mean=cdf.mean)


def summarize(results: Sequence[DropResult]) -> RunSummary:
    pooled = aggregate(results)
    return RunSummary(
        drops=len(results),
        users=int(sum(r.num_users for r in results)),
        throughput=_quantiles(pooled["throughput"]),
        relay_fraction=_quantiles(pooled["relay_fraction"]),
        total_relay_load=float(np.mean([r.relay_fraction.sum() for r in results])),
        mean_streams=float(np.mean([r.mean_streams for r in results])),
        drift_ok=all(r.drift_ok for r in results),
        limsup_ok=all(r.limsup_ok for r in results),
    )


def compare(coop: RunSummary, base: RunSummary) -> dict[str, float]:
    """Cooperative over baseline ratios at the 5th percentile and the median."""

    def ratio(a: float, b: float) -> float:
        return a / b if b > 0 else float("inf")

    return {
        "p5_gain": ratio(coop.throughput.p5, base.throughput.p5),
        "median_gain": ratio(coop.throughput.median, base.throughput.median),
        "extra_streams": coop.mean_streams - base.mean_streams,
    }


@dataclass
class SimulationRun:
    cooperative: list[DropResult]
    baseline: Optional[list[DropResult]] = None

    def summary(self) -> SimulationSummary:
        coop = summarize(self.cooperative)
        if self.baseline is None:
            return SimulationSummary(cooperative=coop)
        base = summarize(self.baseline)
        return SimulationSummary(cooperative=coop, baseline=base, gains=compare(coop, base))


class SimulationService:
    """Runs configured simulations and the experiments built on them."""

    def __init__(self, threads: Optional[int] = None):
        self.threads = threads or settings.threads

    def simulate(self, config: SimConfig, baseline: bool = False, keep_trace: bool = False) -> SimulationRun:
        coop = run_drops(config, keep_trace=keep_trace, threads=self.threads)
        base = run_drops(config, cooperation=False, threads=self.threads) if baseline else None
        return SimulationRun(cooperative=coop, baseline=base)

    def _sweep(self, config: SimConfig, name: str, values: Sequence[float], update) -> pd.DataFrame:
        rows = []
        for value in values:
            swept = update(config, value)
            run = self.simulate(swept, baseline=True)
            summary = run.summary()
            rows.append(
                {
                    name: value,
                    "coop_p5": summary.cooperative.throughput.p5,
                    "coop_median": summary.cooperative.throughput.median,
                    "baseline_p5": summary.baseline.throughput.p5,
                    "baseline_median": summary.baseline.throughput.median,
                }
            )
        return pd.DataFrame(rows)

    def sweep_cluster_std(self, config: SimConfig, values: Sequence[float]) -> pd.DataFrame:
        def update(cfg: SimConfig, value: float) -> SimConfig:
            return cfg.model_copy(update={"network": cfg.network.model_copy(update={"cluster_std_m": value})})

        return self._sweep(config, "cluster_std_m", values, update)

    def sweep_availability(self, config: SimConfig, values: Sequence[float]) -> pd.DataFrame:
        def update(cfg: SimConfig, value: float) -> SimConfig:
            return cfg.model_copy(update={"network": cfg.network.model_copy(update={"availability": value})})

        return self._sweep(config, "availability", values, update)


# --- SNR scaling --------------------------------------------------------------


def psi(ell: int) -> float:
    """(ell!)^(1/ell)."""
    return math.exp(math.lgamma(ell + 1) / ell)


def coop_threshold(n: int, M: int, rho: float) -> float:
    if n < 3:
        raise DomainError("scaling thresholds need n >= 3")
    return 0.5 * M * rho * (0.5 * math.log(n) - 2.0 * math.log(math.log(n))) - 1.0


def noncoop_threshold(n: int, M: int, rho: float, paths: int, gamma: float = 0.5) -> float:
    return M * rho * n ** (-gamma / (2.0 * paths)) * psi(2 * paths)


def min_snr_trial(n: int, config: NetworkConfig, seed: np.random.SeedSequence) -> tuple[float, float]:
    """(min_i coop SNR with j*(i), min_i ||h_i||^2) for one single-cluster draw.

    j*(i) maximizes the realized cooperative SNR lower bound, so a relay in a
    deep D2D fade is never picked.
    """
    rng = np.random.default_rng(seed)
    positions = uniform_disc(n, config.cluster_std_m, rng)
    phi = pathloss_map(positions, config)
    H = downlink_channels(np.full(n, config.rho), config, rng)
    Z, _ = draw_d2d_state(phi, 1.0, rng)
    g = np.sqrt(phi) * Z
    score = coop_snr_lower_bound(H[None, :, :], g)
    np.fill_diagonal(score, -np.inf)
    relay = np.argmax(score, axis=1)
    users = np.arange(n)
    coop = coop_snr(H, H[relay], np.abs(g[users, relay]) ** 2)
    noncoop_min = float(np.min(np.sum(np.abs(H) ** 2, axis=1)))
    return float(np.min(coop)), noncoop_min


def scaling_experiment(
    n_list: Sequence[int],
    trials: int,
    config: NetworkConfig,
    gamma: float = 0.5,
    threads: Optional[int] = None,
) -> pd.DataFrame:
    """Median weakest-user SNR with and without cooperation, against the analytic thresholds."""
    bad = [n for n in n_list if n < 3]
    if bad:
        raise DomainError(f"scaling experiment needs n >= 3, got {bad}")
    jobs = threads or settings.threads
    root = np.random.SeedSequence(config.seed)
    rows = []
    for n, child in zip(n_list, root.spawn(len(n_list))):
        seeds = child.spawn(trials)
        if jobs == 1:
            values = [min_snr_trial(n, config, s) for s in seeds]
        else:
            values = Parallel(n_jobs=jobs)(delayed(min_snr_trial)(n, config, s) for s in seeds)
        coop = np.array([v[0] for v in values])
        noncoop = np.array([v[1] for v in values])
        c_thr = coop_threshold(n, config.M, config.rho)
        n_thr = noncoop_threshold(n, config.M, config.rho, config.num_paths, gamma)
        row = ScalingRow(
            n=n,
            coop_median=float(np.median(coop)),
            noncoop_median=float(np.median(noncoop)),
            coop_threshold=c_thr,
            noncoop_threshold=n_thr,
            coop_above_threshold=float(np.mean(coop >= c_thr)),
            noncoop_below_threshold=float(np.mean(noncoop <= n_thr)),
        )
        logger.info("scaling n=%d: coop median %.3f, noncoop median %.3f", n, row.coop_median, row.noncoop_median)
        rows.append(row.model_dump())
    return pd.DataFrame(rows)


# --- optimality certificate ---------------------------------------------------


@dataclass
class TablePolicyRun:
    users: UserState
    schedules: list[ScheduleSet]
    utility: list[tuple[int, float]]
    clique_loads: np.ndarray  # (T, nQ)
    clique_sizes: np.ndarray
    clique_p_min: np.ndarray


def run_table_policy(
    table: RateTable,
    frames: int,
    seed: int = 0,
    kind: SchedulerKind = SchedulerKind.EXHAUSTIVE,
    barrier_index: Optional[float] = None,
    checkpoints: Sequence[int] = (),
    keep_schedules: bool = False,
) -> TablePolicyRun:
    """Run the frame policy on a fixed rate table with running averages."""
    model = TableRateModel(table)
    vertices = table.ordered_pairs()
    availability = table.availability_map()
    clique_state = build_clique_state(table.clique_pairs(), vertices, availability)
    scheduler = Scheduler(
        model,
        UtilityParams(table.kappa),
        kind=kind,
        barrier_index=barrier_index,
        clique_state=clique_state,
        vertices=vertices,
    )
    users = UserState.initial(table.num_users, AveragingMode.RUNNING)
    rng = np.random.default_rng(seed)
    marks = set(checkpoints) | {frames}
    schedules, trajectory = [], []
    loads = np.zeros((frames, clique_state.size))
    params = UtilityParams(table.kappa)
    for t in range(1, frames + 1):
        k, z = model.draw_state(rng)
        decision = scheduler.schedule(k, users)
        delivered = model.delivered_rates(k, z, decision.schedule)
        scheduler.commit(decision.schedule, t)
        users = update_user_states(users, delivered, decision.schedule, t)
        loads[t - 1] = clique_state.loads()
        if keep_schedules:
            schedules.append(decision.schedule)
        if t in marks:
            trajectory.append((t, total_utility(users.r, users.beta_for_gradient(), params)))
    p_min = np.array(
        [min((availability.get(vertices[v], 1.0) for v in m), default=1.0) for m in clique_state.members], dtype=float
    )
    return TablePolicyRun(
        users=users,
        schedules=schedules,
        utility=trajectory,
        clique_loads=loads,
        clique_sizes=np.array([len(m) for m in clique_state.members], dtype=np.int64),
        clique_p_min=p_min,
    )


@dataclass
class OptimalityCertificate:
    opt_value: float
    trajectory: pd.DataFrame  # t, utility, abs_error
    final_error: float
    tolerance: float
    solver_converged: bool

    @property
    def passed(self) -> bool:
        return self.final_error <= self.tolerance


def optimality_certificate(
    table: RateTable,
    frames: int,
    seed: int = 0,
    checkpoints: Optional[Sequence[int]] = None,
) -> OptimalityCertificate:
    """|U*(t) - OPT'| along the run, OPT' from the reference solver."""
    solved = solve_opt3(ReferenceProblem.from_table(table))
    if checkpoints is None:
        checkpoints = sorted({int(frames * f) for f in (0.001, 0.01, 0.1, 0.5)} - {0})
    run = run_table_policy(table, frames, seed=seed, checkpoints=checkpoints)
    trajectory = pd.DataFrame(run.utility, columns=["t", "utility"])
    trajectory["abs_error"] = (trajectory["utility"] - solved.value).abs()
    final = float(trajectory["abs_error"].iloc[-1])
    tolerance = OPTIMALITY_TOLERANCE * max(1.0, abs(solved.value))
    if final > tolerance:
        logger.error("scheduler utility %.6f is %.4f away from the optimum %.6f", trajectory["utility"].iloc[-1], final, solved.value)
    return OptimalityCertificate(
        opt_value=solved.value,
        trajectory=trajectory,
        final_error=final,
        tolerance=tolerance,
        solver_converged=solved.converged,
    )
