import sys
import os

import numpy as np
import pytest
from sklearn.linear_model import LinearRegression

# Add current dir to path
sys.path.append(os.getcwd())

from app.core.exceptions import DomainError
from app.models import CooperativePair, Distortion, EffectiveStream, StreamId
from app.services.phy_service import (
    batch_schedule_rates,
    conditional_variance,
    conditional_variance_from_covariance,
    coop_snr,
    coop_snr_lower_bound,
    cutset_bound,
    fading_grid,
    gap_check,
    gap_sweep,
    mimo_rate,
    mu_mimo_rates,
    optimize_input_covariance,
    output_covariance,
    random_relay_instance,
    rzf_precoder,
    snr_metrics,
    stream_rates,
    top_singular_closed_form,
    virtual_channels,
    water_filling,
    wz_distortion,
)


def cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def test_top_singular_matches_svd():
    rng = np.random.default_rng(0)
    for M in (1, 2, 4, 8):
        for _ in range(250):
            h_i, h_j = cn(rng, M), cn(rng, M)
            s = np.linalg.svd(np.vstack([h_i, h_j]), compute_uv=False)
            assert top_singular_closed_form(h_i, h_j) == pytest.approx(s[0] ** 2, rel=1e-9)


def test_conditional_variance_is_regression_residual():
    rng = np.random.default_rng(1)
    for _ in range(20):
        X = rng.standard_normal((500, 2)) @ rng.standard_normal((2, 2))
        sigma = X.T @ X / X.shape[0]
        fit = LinearRegression(fit_intercept=False).fit(X[:, :1], X[:, 1])
        residual = np.mean((X[:, 1] - fit.predict(X[:, :1])) ** 2)
        assert conditional_variance(sigma) == pytest.approx(residual, rel=1e-9)


def test_conditional_variance_determinant_identity():
    rng = np.random.default_rng(2)
    for _ in range(50):
        H = cn(rng, (2, 4))
        A = cn(rng, (4, 4))
        Q = A @ A.conj().T
        Q /= np.real(np.trace(Q))
        sigma = output_covariance(H, Q)
        expected = np.real(np.linalg.det(sigma)) / np.real(sigma[0, 0])
        assert conditional_variance_from_covariance(H, Q) == pytest.approx(expected, rel=1e-9)


def test_wz_distortion_cases():
    assert wz_distortion(2.0, 0.5j).value == pytest.approx(8.0)
    assert not wz_distortion(2.0, 0.0).available
    assert wz_distortion(2.0, 0.0, self_pair=True).value == 0.0
    with pytest.raises(DomainError):
        wz_distortion(-1.0, 1.0)


def test_water_filling_budget_and_levels():
    gains = np.array([4.0, 1.0, 0.25, 0.0])
    p = water_filling(gains, 1.0)
    assert p.sum() == pytest.approx(1.0, abs=1e-9)
    assert p[3] == 0.0
    active = p > 0
    levels = p[active] + 1.0 / gains[active]
    np.testing.assert_allclose(levels, levels[0], atol=1e-6)


def test_optimized_covariance_beats_isotropic():
    rng = np.random.default_rng(3)
    for _ in range(30):
        H = cn(rng, (2, 4))
        Q, rate = optimize_input_covariance(H, 0.5)
        assert np.real(np.trace(Q)) == pytest.approx(1.0, abs=1e-8)
        assert mimo_rate(H, 0.5, Q) == pytest.approx(rate, rel=1e-8)
        assert rate >= mimo_rate(H, 0.5, np.eye(4) / 4) - 1e-9


def test_mimo_rate_without_side_channel_is_direct_link():
    rng = np.random.default_rng(4)
    H = cn(rng, (2, 3))
    Q = np.eye(3) / 3
    direct = np.log2(1.0 + np.real(H[0] @ Q @ H[0].conj()))
    assert mimo_rate(H, Distortion.unavailable(), Q) == pytest.approx(direct, rel=1e-12)


def test_mimo_rate_rejects_bad_covariance():
    H = np.ones((2, 2), dtype=complex)
    with pytest.raises(DomainError):
        mimo_rate(H, 0.0, np.eye(2))
    with pytest.raises(DomainError):
        mimo_rate(H, 0.0, np.array([[0.5, 0.0], [0.0, -0.1]]))


def test_stream_rates_sum_to_capacity_without_distortion():
    rng = np.random.default_rng(5)
    for _ in range(20):
        H = cn(rng, (2, 4))
        _, rate = optimize_input_covariance(H, 0.0)
        s = np.linalg.svd(H, compute_uv=False)
        p = water_filling(s**2)
        r1, r2 = stream_rates(H, 0.0, p[0], p[1])
        assert r1 + r2 == pytest.approx(rate, rel=1e-9)


def test_gap_within_two_bits():
    for _, _, report in gap_sweep(40, seed=7):
        assert report.within_bound
        assert report.r_mimo <= report.cutset + 1e-9


@pytest.mark.slow
def test_gap_within_two_bits_full_sweep():
    rows = gap_sweep(1000, seed=7)
    assert len(rows) == 3000
    assert all(-1e-9 <= r.gap <= 2.0 + 1e-9 for _, _, r in rows)


def test_gap_check_single_antenna():
    H = np.array([[1.0 + 0j], [0.5 + 0.5j]])
    report = gap_check(H, 2.0)
    assert report.within_bound
    assert report.cutset == pytest.approx(cutset_bound(H, 2.0))


def test_random_relay_instance_shapes():
    pair = random_relay_instance(4, np.random.default_rng(8))
    assert isinstance(pair, CooperativePair)
    assert pair.H.shape == (2, 4) and pair.num_antennas == 4
    assert isinstance(pair.d2d_gain, complex)
    with pytest.raises(ValueError):
        CooperativePair(np.ones(3), np.ones(4), 1.0)


def test_fading_grid_mean():
    grid = fading_grid(1000)
    assert grid.weights.sum() == pytest.approx(1.0)
    assert np.all(np.diff(grid.points) > 0)
    assert grid.points @ grid.weights == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(DomainError):
        fading_grid(0)


def test_rzf_orthogonal_users_see_no_interference():
    eff = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]], dtype=complex)
    W = rzf_precoder(eff)
    np.testing.assert_allclose(np.linalg.norm(W, axis=0), np.ones(2))
    X = eff @ W
    assert abs(X[0, 1]) < 1e-12
    assert abs(X[1, 0]) < 1e-12


def test_single_stream_rate_is_matched_filter():
    h = np.array([1.0, 1.0j, 0.5])
    stream = EffectiveStream(StreamId(0, 0, 1), h, 1.0, float(np.linalg.norm(h)), np.array([1.0, 0.0]))
    rate = mu_mimo_rates([stream])[0]
    assert rate == pytest.approx(np.log2(1.0 + np.linalg.norm(h) ** 2))
    backed_off = mu_mimo_rates([stream], snr_backoff_db=3.0)[0]
    assert backed_off < rate


def test_too_many_streams_rejected():
    h = np.array([1.0, 0.0])
    streams = [EffectiveStream(StreamId(k, k, 1), h, 1.0, 1.0, np.array([1.0, 0.0])) for k in range(3)]
    with pytest.raises(DomainError):
        mu_mimo_rates(streams)


def test_dead_side_channel_falls_back_to_direct_link():
    rng = np.random.default_rng(9)
    H = cn(rng, (2, 4))
    streams = virtual_channels([StreamId(0, 1, 1), StreamId(0, 1, 2)], H, {(0, 1): Distortion.unavailable()})
    np.testing.assert_allclose(streams[0].eff_vector, H[0])
    assert streams[0].usable
    assert not streams[1].usable


def test_batch_rates_match_per_set_evaluation_for_direct_streams():
    rng = np.random.default_rng(10)
    H = cn(rng, (3, 4))
    eff = H[None, :, :]
    pair_H = np.stack([np.vstack([h, np.zeros(4)]) for h in H])[None]
    batch = batch_schedule_rates(eff, pair_H, np.zeros((1, 3)), np.ones((1, 3, 1)), np.ones(1), snr_backoff_db=3.0)
    streams = virtual_channels([StreamId(k, k, 1) for k in range(3)], H, {})
    np.testing.assert_allclose(batch[0], mu_mimo_rates(streams, snr_backoff_db=3.0), rtol=1e-10)


def test_coop_snr_limits():
    rng = np.random.default_rng(11)
    h_i, h_j = cn(rng, 4), cn(rng, 4)
    s1 = top_singular_closed_form(h_i, h_j)
    assert coop_snr(h_i, h_j, 1e12) == pytest.approx(s1, rel=1e-6)
    assert coop_snr(h_i, h_j, 0.0) == 0.0
    assert coop_snr(h_i, h_j, 1.0) < s1


def test_snr_metrics_never_picks_unconnected_relay():
    rng = np.random.default_rng(12)
    H = cn(rng, (3, 4))
    phi = np.array([[0.0, 0.0, 5.0], [0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
    Z = np.ones((3, 3), dtype=complex)
    metrics = snr_metrics(0, [1, 2], H, phi, Z)
    assert metrics.best_relay == 2
    assert metrics.coop[1] == 0.0
    assert metrics.noncoop == pytest.approx(np.sum(np.abs(H[0]) ** 2))


def test_coop_snr_never_below_lower_bound():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        h_i, h_j = cn(rng, 8), cn(rng, 8)
        g = np.sqrt(10.0 ** rng.uniform(-2, 3)) * cn(rng, ())
        assert coop_snr(h_i, h_j, abs(g) ** 2) >= coop_snr_lower_bound(h_j, g) - 1e-9


def test_coop_snr_lower_bound_broadcasts():
    rng = np.random.default_rng(14)
    H = cn(rng, (4, 3))
    g = cn(rng, (4, 4))
    table = coop_snr_lower_bound(H[None, :, :], g)
    assert table.shape == (4, 4)
    assert table[2, 1] == pytest.approx(coop_snr_lower_bound(H[1], g[2, 1]))
    assert isinstance(coop_snr_lower_bound(H[0], 0.0), float)
    assert coop_snr_lower_bound(H[0], 0.0) == -1.0


def test_virtual_channel_norm_is_singular_value():
    rng = np.random.default_rng(15)
    H = cn(rng, (3, 4))
    schedule = [StreamId(0, 1, 1), StreamId(0, 1, 2), StreamId(2, 2, 1)]
    streams = virtual_channels(schedule, H, {(0, 1): Distortion(0.4)})
    s = np.linalg.svd(H[[0, 1]], compute_uv=False)
    for stream, expected in zip(streams, [s[0], s[1], np.linalg.norm(H[2])]):
        assert np.linalg.norm(stream.eff_vector) == pytest.approx(expected, rel=1e-10)
        assert stream.singular_value == pytest.approx(expected, rel=1e-10)
    assert streams[0].noise_var == pytest.approx(1.0 + abs(streams[0].left_column[1]) ** 2 * 0.4)


def test_mu_mimo_rates_orthogonal_streams_are_exact():
    eff = [np.array([2.0, 0.0, 0.0]), np.array([0.0, 1.0j, 0.0]), np.array([0.0, 0.0, 0.5])]
    noise = [1.0, 1.5, 2.0]
    streams = [
        EffectiveStream(StreamId(k, k, 1), h, v, float(np.linalg.norm(h)), np.array([1.0, 0.0]))
        for k, (h, v) in enumerate(zip(eff, noise))
    ]
    expected = [np.log2(1.0 + np.linalg.norm(h) ** 2 / 3 / v) for h, v in zip(eff, noise)]
    np.testing.assert_allclose(mu_mimo_rates(streams), expected, rtol=1e-10)
    np.testing.assert_allclose(mu_mimo_rates(streams, regularization=0.3), expected, rtol=1e-10)


def test_mu_mimo_rates_fall_with_backoff():
    rng = np.random.default_rng(16)
    H = cn(rng, (3, 4))
    streams = virtual_channels([StreamId(k, k, 1) for k in range(3)], H, {})
    rates = np.array([mu_mimo_rates(streams, snr_backoff_db=b) for b in (0.0, 1.0, 3.0, 6.0)])
    assert np.all(np.diff(rates, axis=0) < 0)


def test_optimized_covariance_beats_random_feasible_inputs():
    rng = np.random.default_rng(17)
    H = cn(rng, (2, 4))
    _, best = optimize_input_covariance(H, 0.7)
    for _ in range(100):
        A = cn(rng, (4, 4))
        Q = A @ A.conj().T
        Q = rng.uniform(0.1, 1.0) * Q / np.real(np.trace(Q))
        assert mimo_rate(H, 0.7, Q) <= best + 1e-9


def test_stream_rates_below_optimal_covariance_with_distortion():
    rng = np.random.default_rng(18)
    for _ in range(50):
        H = cn(rng, (2, 4))
        D = float(rng.uniform(0.1, 5.0))
        _, best = optimize_input_covariance(H, D)
        P1 = float(rng.uniform())
        r1, r2 = stream_rates(H, D, P1, 1.0 - P1)
        assert r1 + r2 <= best + 1e-9


def test_cutset_bound_tends_to_mimo_capacity():
    rng = np.random.default_rng(19)
    H = cn(rng, (2, 4))
    Q, capacity = optimize_input_covariance(H, 0.0)
    bounds = [cutset_bound(H, g) for g in (0.1, 1.0, 10.0, 1e2, 1e4)]
    assert np.all(np.diff(bounds) >= -1e-12)
    assert bounds[-1] == pytest.approx(capacity, rel=1e-12)
    D = wz_distortion(conditional_variance_from_covariance(H, Q), 1e4)
    assert mimo_rate(H, D, Q) == pytest.approx(capacity, abs=1e-4)
