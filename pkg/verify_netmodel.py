import sys
import os

import numpy as np
import pytest
from scipy import stats
from pydantic import ValidationError

# Add current dir to path
sys.path.append(os.getcwd())

from app.core.exceptions import ConfigError
from app.schemas.network import NetworkConfig, large_cell, small_cell
from app.services.netmodel_service import (
    NetworkModel,
    d2d_pathloss,
    downlink_channels,
    draw_d2d_state,
    pathloss_map,
    place_users,
    steering_vector,
    uniform_disc,
    user_path_gains,
)


def test_place_users_shapes():
    config = NetworkConfig(n=12)
    geometry = place_users(config, np.random.default_rng(1))
    assert geometry.user_positions.shape == (12, 2)
    assert geometry.num_clusters >= 1
    assert geometry.user_cluster.min() >= 0
    assert geometry.user_cluster.max() < geometry.num_clusters


def test_empty_poisson_draw_falls_back_to_one_cluster():
    config = NetworkConfig(n=5, cluster_intensity=0.0)
    geometry = place_users(config, np.random.default_rng(0))
    assert geometry.num_clusters == 1
    assert np.all(geometry.user_cluster == 0)


def test_pathloss_map_symmetric_with_zero_diagonal():
    config = NetworkConfig(n=6)
    positions = uniform_disc(6, 50.0, np.random.default_rng(3))
    phi = pathloss_map(positions, config)
    np.testing.assert_allclose(phi, phi.T)
    assert np.all(np.diag(phi) == 0)
    assert np.all(phi[~np.eye(6, dtype=bool)] > 0)


def test_pathloss_clamps_short_distances():
    config = NetworkConfig()
    assert d2d_pathloss(0.0, config) == pytest.approx(config.phi0 * 0.1 ** (-3.0))
    assert d2d_pathloss(10.0, config) == pytest.approx(config.phi0 / 1000.0)


def test_uniform_disc_stays_inside():
    points = uniform_disc(2000, 7.5, np.random.default_rng(9))
    assert np.all(np.linalg.norm(points, axis=1) <= 7.5 + 1e-12)


def test_steering_vector_unit_modulus():
    e = steering_vector(0.7, 8, 0.5)
    np.testing.assert_allclose(np.abs(e), np.ones(8))
    assert e[0] == pytest.approx(1.0)


def test_downlink_channel_power():
    config = NetworkConfig(M=4, num_paths=2, rho=1.0)
    H = downlink_channels(np.ones(20_000), config, np.random.default_rng(11))
    assert H.shape == (20_000, 4)
    # E||h||^2 = rho * P * M
    assert np.mean(np.sum(np.abs(H) ** 2, axis=1)) == pytest.approx(8.0, rel=0.05)


def test_user_path_gains_default_is_flat():
    config = NetworkConfig(n=8, rho=2.5)
    geometry = place_users(config, np.random.default_rng(2))
    np.testing.assert_allclose(user_path_gains(geometry, config), np.full(8, 2.5))


def test_user_path_gains_shadowing_spread():
    config = NetworkConfig(n=4000, rho=2.0, bs_shadowing_db=8.0)
    rng = np.random.default_rng(3)
    geometry = place_users(config, rng)
    gains_db = 10.0 * np.log10(user_path_gains(geometry, config, rng) / 2.0)
    assert abs(np.mean(gains_db)) < 0.5
    assert np.std(gains_db) == pytest.approx(8.0, rel=0.05)
    with pytest.raises(ConfigError):
        user_path_gains(geometry, config)


def test_network_model_draws_shadowed_gains():
    model = NetworkModel(large_cell(seed=4), np.random.default_rng(4))
    assert model.drop.rho.shape == (25,)
    assert np.unique(model.drop.rho).size == 25


def test_mean_cluster_count():
    config = NetworkConfig(n=2)
    rng = np.random.default_rng(5)
    counts = [place_users(config, rng).num_clusters for _ in range(4000)]
    lam = config.mean_clusters
    assert np.mean(counts) == pytest.approx(lam / (1.0 - np.exp(-lam)), rel=0.02)
    assert np.mean(counts) == pytest.approx(lam, rel=0.03)


def test_d2d_state_symmetric_fading_and_availability():
    phi = np.ones((5, 5)) - np.eye(5)
    Z, B = draw_d2d_state(phi, 0.5, np.random.default_rng(4))
    np.testing.assert_allclose(Z, Z.T)
    assert np.all(np.diag(B) == 1)
    assert set(np.unique(B)) <= {0, 1}

    _, B_full = draw_d2d_state(phi, 1.0, np.random.default_rng(4))
    assert np.all(B_full == 1)


def test_same_seed_same_channel_stream():
    config = NetworkConfig(n=6, M=4)
    a = NetworkModel(config, np.random.default_rng(21))
    b = NetworkModel(config, np.random.default_rng(21))
    for t in range(1, 4):
        sa, sb = a.next_state(t), b.next_state(t)
        np.testing.assert_array_equal(sa.H, sb.H)
        np.testing.assert_array_equal(sa.Z, sb.Z)
        np.testing.assert_array_equal(sa.B, sb.B)


def test_config_rejects_bad_input():
    with pytest.raises(ValidationError):
        NetworkConfig(cluster_std_m=2000.0)
    with pytest.raises(ValidationError):
        NetworkConfig(n=3, availability=[[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ValidationError):
        NetworkConfig(availability=0.0)
    with pytest.raises(ValidationError):
        NetworkConfig(unknown_key=1)


def test_presets():
    assert large_cell().n == 25
    assert large_cell().mean_clusters == pytest.approx(5.0)
    assert small_cell().n == 10
    assert small_cell().mean_clusters == pytest.approx(3.0)
    assert large_cell().bs_shadowing_db == 8.0
    assert small_cell().bs_shadowing_db == 0.0


def test_pathloss_tail_matches_uniform_disc():
    # distance d from the cell center of a uniform-disc point has P(d <= r) = (r/a)^2,
    # so P(phi >= x) = (phi0 / x)^(2/c) / a^2
    config = NetworkConfig(cell_radius_m=50.0)
    points = uniform_disc(100_000, config.cell_radius_m, np.random.default_rng(17))
    phi = d2d_pathloss(np.linalg.norm(points, axis=1), config)
    tail = (config.phi0 / phi) ** (2.0 / config.pathloss_exp) / config.cell_radius_m**2
    assert stats.kstest(tail, "uniform").statistic < 0.02


def test_availability_frequency():
    phi = np.ones((80, 80)) - np.eye(80)
    _, B = draw_d2d_state(phi, 0.3, np.random.default_rng(6))
    off = B[~np.eye(80, dtype=bool)]
    assert off.mean() == pytest.approx(0.3, abs=0.03)


def test_steering_vector_broadside_and_endfire():
    np.testing.assert_allclose(steering_vector(np.pi / 2, 4, 0.5), np.ones(4), atol=1e-12)
    np.testing.assert_allclose(steering_vector(0.0, 4, 0.5), [1, -1, 1, -1], atol=1e-12)
