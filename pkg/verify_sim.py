import sys
import os
import json
import math

import numpy as np
import pytest

# Add current dir to path
sys.path.append(os.getcwd())

from app.core.exceptions import DomainError
from app.models import CdfSummary, SchedulerKind
from app.schemas.network import NetworkConfig
from app.schemas.reference import RateTable
from app.schemas.simulation import ScalingRequest, SchedulerConfig, SimConfig
from app.services.netmodel_service import downlink_channels, draw_d2d_state, pathloss_map, uniform_disc
from app.services.phy_service import coop_snr_lower_bound
from app.services.simulation_service import (
    DropSimulation,
    SimulationRun,
    SimulationService,
    aggregate,
    coop_threshold,
    drop_seeds,
    estimate_channels,
    min_snr_trial,
    noncoop_threshold,
    optimality_certificate,
    psi,
    run_drop,
    run_table_policy,
    scaling_experiment,
    stream_histogram,
)


def small_config(**overrides) -> SimConfig:
    # one tight cluster: every pair is D2D-connected
    network = NetworkConfig(n=4, M=4, seed=3, cell_radius_m=100.0, cluster_std_m=5.0)
    base = dict(
        network=network,
        frames=60,
        ewma_window=10,
        kappa=1.0,
        burn_in=20,
        grid_points=8,
        scheduler=SchedulerConfig(kind=SchedulerKind.GREEDY),
    )
    base.update(overrides)
    return SimConfig(**base)


def tiny_table() -> RateTable:
    with open("configs/tiny_table.json") as fh:
        return RateTable.model_validate(json.load(fh))


def large_cell_config(**overrides) -> SimConfig:
    with open("configs/large_cell.json") as fh:
        config = SimConfig.model_validate(json.load(fh))
    return config.model_copy(update=overrides)


def test_estimate_channels():
    rng = np.random.default_rng(0)
    H = np.ones((4000, 4), dtype=complex)
    np.testing.assert_array_equal(estimate_channels(H, 0.0, rng), H)
    noisy = estimate_channels(H, 0.1, rng)
    assert np.mean(np.abs(noisy - H) ** 2) == pytest.approx(0.1, rel=0.05)


def test_drop_simulation_bounds_and_load_checks():
    config = small_config()
    result = run_drop(config, drop_seeds(config)[0], keep_trace=True, keep_clique_loads=True)
    assert result.throughput.shape == (4,)
    assert np.all(result.throughput >= 0)
    assert np.all((result.relay_fraction >= 0) & (result.relay_fraction <= 1))
    assert np.all(result.stream_counts <= 4)
    assert result.drift_ok and result.limsup_ok
    assert len(result.records) == 60
    assert result.clique_loads.shape[0] == 60
    assert list(result.queue_trace.columns) == ["t", "i", "j", "Q", "A", "mu", "B", "J"]
    for record in result.records:
        partners = {}
        for s in record.schedule:
            partners.setdefault(s.dest, set()).add(s.relay)
        # one partner per destination
        assert all(len(p) == 1 for p in partners.values())
        assert record.eligible_pair_count <= 12
        assert set(record.arrivals) == {s.pair for s in record.schedule if not s.is_self}


def test_throughput_is_mean_delivered_rate():
    config = small_config()
    result = run_drop(config, drop_seeds(config)[0], keep_trace=True)
    delivered = np.mean([r.delivered for r in result.records], axis=0)
    np.testing.assert_allclose(result.throughput, delivered, rtol=1e-12)


def test_same_seed_same_drop():
    config = small_config()
    seed = drop_seeds(config)[0]
    a, b = run_drop(config, seed), run_drop(config, seed)
    np.testing.assert_array_equal(a.throughput, b.throughput)
    np.testing.assert_array_equal(a.stream_counts, b.stream_counts)


def test_baseline_never_relays():
    config = small_config()
    result = run_drop(config, drop_seeds(config)[0], cooperation=False, keep_trace=True)
    assert np.all(result.relay_fraction == 0)
    assert all(s.is_self for r in result.records for s in r.schedule)


def test_arrival_into_violated_clique_breaks_drift():
    config = small_config()
    drop = DropSimulation(config, np.random.default_rng(1))
    q = drop.clique_state.by_vertex[0][0]
    violated = np.zeros(drop.clique_state.size, dtype=bool)
    drop._check_loads(violated, [0], 1)
    assert drop.drift_ok
    violated[q] = True
    drop._check_loads(violated, [0], 2)
    assert not drop.drift_ok


def test_simulate_with_baseline_summary():
    config = small_config(frames=30, drops=2)
    run = SimulationService(threads=1).simulate(config, baseline=True)
    assert len(run.cooperative) == 2 and len(run.baseline) == 2
    summary = run.summary()
    assert summary.cooperative.users == 8
    assert set(summary.gains) == {"p5_gain", "median_gain", "extra_streams"}
    assert summary.baseline.relay_fraction.mean == 0.0
    histogram = stream_histogram(run.cooperative)
    assert histogram["frames"].sum() == 60
    assert histogram["fraction"].sum() == pytest.approx(1.0)
    pooled = aggregate(run.cooperative)
    assert pooled["throughput"].values.size == 8


def test_summary_without_baseline_has_no_gains():
    config = small_config(frames=20)
    run = SimulationRun(cooperative=[run_drop(config, drop_seeds(config)[0])])
    summary = run.summary()
    assert summary.baseline is None and summary.gains is None


def test_cdf_summary():
    cdf = CdfSummary.from_values([4.0, 1.0, 3.0, 2.0])
    assert cdf.median == pytest.approx(2.5)
    assert cdf.p5 == pytest.approx(1.15)
    assert cdf.mean == pytest.approx(2.5)
    frame = cdf.to_frame()
    assert frame["value"].tolist() == [1.0, 2.0, 3.0, 4.0]
    assert frame["cdf"].iloc[-1] == 1.0
    assert math.isnan(CdfSummary.from_values([]).median)


def test_scaling_thresholds():
    assert psi(2) == pytest.approx(math.sqrt(2.0))
    assert psi(1) == pytest.approx(1.0)
    assert coop_threshold(10, 8, 1.0) < 0
    assert coop_threshold(10**6, 8, 1.0) > 0
    assert noncoop_threshold(100, 8, 1.0, 2) == pytest.approx(8 * 100 ** (-0.125) * psi(4))
    with pytest.raises(DomainError):
        coop_threshold(2, 8, 1.0)


def test_scaling_experiment_small():
    config = NetworkConfig(M=4, num_paths=2, seed=5)
    table = scaling_experiment([3, 6], trials=3, config=config, threads=1)
    assert table["n"].tolist() == [3, 6]
    assert table["coop_above_threshold"].between(0, 1).all()
    assert table["noncoop_below_threshold"].between(0, 1).all()
    assert (table["noncoop_median"] > 0).all()
    with pytest.raises(DomainError):
        scaling_experiment([2], trials=1, config=config, threads=1)


def test_min_snr_trial_relay_clears_best_lower_bound():
    config = NetworkConfig(M=8, num_paths=2, seed=0)
    seed = np.random.SeedSequence(11)
    coop_min, noncoop_min = min_snr_trial(40, config, seed)
    # same draws as the trial
    rng = np.random.default_rng(seed)
    positions = uniform_disc(40, config.cluster_std_m, rng)
    phi = pathloss_map(positions, config)
    H = downlink_channels(np.full(40, config.rho), config, rng)
    Z, _ = draw_d2d_state(phi, 1.0, rng)
    bound = coop_snr_lower_bound(H[None, :, :], np.sqrt(phi) * Z)
    np.fill_diagonal(bound, -np.inf)
    assert coop_min >= bound.max(axis=1).min() - 1e-9
    assert noncoop_min == pytest.approx(np.min(np.sum(np.abs(H) ** 2, axis=1)))


@pytest.mark.slow
def test_weakest_user_snr_trends():
    request = ScalingRequest()
    table = scaling_experiment(request.n_list, request.trials, request.network, request.gamma, threads=1)
    assert np.all(np.diff(table["coop_median"]) > 0)
    assert np.all(np.diff(table["noncoop_median"]) < 0)
    assert table["coop_median"].iloc[-1] > table["noncoop_median"].iloc[-1]
    assert table["coop_above_threshold"].iloc[-1] >= 0.9


def test_barrier_and_flow_control_agree_on_tiny_table():
    table = tiny_table()
    plain = run_table_policy(table, 2000, seed=4, keep_schedules=True)
    barrier = run_table_policy(
        table, 2000, seed=4, kind=SchedulerKind.BARRIER, barrier_index=200.0, keep_schedules=True
    )
    assert plain.schedules == barrier.schedules
    assert np.all(plain.clique_loads <= 1)


@pytest.mark.slow
def test_barrier_and_flow_control_agree_long_run():
    table = tiny_table()
    plain = run_table_policy(table, 10_000, seed=8, keep_schedules=True)
    barrier = run_table_policy(
        table, 10_000, seed=8, kind=SchedulerKind.BARRIER, barrier_index=200.0, keep_schedules=True
    )
    assert plain.schedules == barrier.schedules


def test_table_policy_checkpoints():
    run = run_table_policy(tiny_table(), 200, seed=1, checkpoints=[10, 100])
    assert [t for t, _ in run.utility] == [10, 100, 200]
    assert run.users.frame == 200
    assert run.clique_loads.shape == (200, 1)


@pytest.mark.slow
def test_optimality_certificate():
    cert = optimality_certificate(tiny_table(), 100_000, seed=0)
    assert cert.solver_converged
    assert cert.passed
    assert cert.trajectory["t"].iloc[-1] == 100_000


@pytest.mark.slow
def test_cooperation_lifts_weak_users_on_large_cell():
    summary = SimulationService().simulate(large_cell_config(), baseline=True).summary()
    assert summary.gains["p5_gain"] >= 1.5
    assert summary.cooperative.drift_ok and summary.cooperative.limsup_ok


@pytest.mark.slow
def test_relay_penalty_cuts_relay_load_at_small_median_cost():
    service = SimulationService()
    penalized = service.simulate(large_cell_config(kappa=7.0)).summary().cooperative
    free = service.simulate(large_cell_config(kappa=0.0)).summary().cooperative
    assert penalized.total_relay_load <= 0.7 * free.total_relay_load
    assert penalized.throughput.median >= 0.8 * free.throughput.median


def test_sweep_script_logs_progress(tmp_path, caplog):
    from scripts.run_sweeps import run_sweeps

    config = small_config(frames=20, burn_in=5, grid_points=4)
    path = tmp_path / "sweep.json"
    path.write_text(config.model_dump_json())
    with caplog.at_level("INFO", logger="scripts.run_sweeps"):
        written = run_sweeps(str(path), str(tmp_path / "out"), [5.0], [1.0], threads=1)
    assert [p.name for p in written] == ["sweep_cluster_std.csv", "sweep_availability.csv"]
    assert all(p.exists() for p in written)
    assert "Sweeping cluster_std_m over [5.0]" in caplog.text
    assert "Sweeping availability over [1.0]" in caplog.text
