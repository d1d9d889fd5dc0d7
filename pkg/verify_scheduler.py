import sys
import os
import itertools
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

# Add current dir to path
sys.path.append(os.getcwd())

from app.core.exceptions import DomainError, GuardExceededError
from app.models import (
    AveragingMode,
    ChannelState,
    CliqueState,
    FadingGrid,
    SchedulerKind,
    StreamId,
    UserState,
    UtilityParams,
    make_set,
)
from app.models.stream import is_compatible
from app.services.conflict_service import stability_cliques
from app.services.phy_service import fading_grid
from app.services.rate_model_service import PhyRateModel
from app.services.scheduler_service import (
    Scheduler,
    barrier_objective,
    build_clique_state,
    eligible_pairs,
    enumerate_sets,
    expected_stream_rate,
    objective_f,
    relay_indicator,
    update_user_states,
    utility,
    utility_gradient,
)


def channel_state(n: int, M: int, seed: int, link: float = 5.0) -> ChannelState:
    rng = np.random.default_rng(seed)
    H = (rng.standard_normal((n, M)) + 1j * rng.standard_normal((n, M))) / np.sqrt(2.0)
    phi = np.full((n, n), link)
    np.fill_diagonal(phi, 0.0)
    Z = np.full((n, n), 0.8 + 0.3j)
    return ChannelState(H=H, phi=phi, Z=Z, B=np.ones((n, n), dtype=np.int64), frame=1)


def users_with(r) -> UserState:
    users = UserState.initial(len(r))
    return replace(users, r=np.asarray(r, dtype=float))


def full_clique_state(state: ChannelState) -> tuple[list, CliqueState]:
    conflict, _, cliques = stability_cliques(state.phi, 1.0)
    return conflict.vertices, build_clique_state(cliques, conflict.vertices, np.ones_like(state.phi))


def brute_force_best(model, known, users, params, max_len):
    candidates = model.candidate_streams(known)
    best, best_value = (), 0.0
    for size in range(1, max_len + 1):
        for combo in itertools.combinations(candidates, size):
            if not all(is_compatible((a,), b) for a, b in itertools.combinations(combo, 2)):
                continue
            value = objective_f(combo, users, params, model, known)
            if value > best_value:
                best, best_value = make_set(combo), value
    return best, best_value


def test_utility_and_gradient():
    params = UtilityParams(kappa=1.0)
    assert utility(2.0, 0.5, params) == pytest.approx(0.0)
    assert utility_gradient(2.0, 0.5, params) == pytest.approx((0.5, -2.0))
    np.testing.assert_allclose(utility(np.array([1.0, np.e]), np.zeros(2), params), [0.0, 1.0])
    with pytest.raises(DomainError):
        utility(0.0, 0.1, params)
    with pytest.raises(DomainError):
        utility_gradient(1.0, 1.0, params)
    with pytest.raises(ValueError):
        UtilityParams(kappa=-1.0)


def test_clique_weights_are_exact():
    vertices = [(0, 1), (1, 0)]
    state = build_clique_state([vertices], vertices, {(0, 1): 0.3})
    assert state.weights == [Fraction(10, 3), Fraction(1)]
    state.record([0], 1)
    assert state.exact_loads() == [Fraction(10, 3)]
    assert state.violated().tolist() == [True]


def test_clique_load_exactly_one_is_not_violated():
    vertices = [(0, 1), (1, 0)]
    state = build_clique_state([vertices], vertices, {(0, 1): 0.5})
    state.record([0], 1)
    state.record([], 2)
    assert state.exact_loads() == [Fraction(1)]
    assert not state.violated()[0]


def test_eligible_pairs_drop_violated_cliques():
    vertices = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)]
    state = CliqueState(members=[[0, 1], [2]], weights=[Fraction(1)] * 6)
    state.record([0, 1], 1)
    eligible = eligible_pairs(state, vertices, 3)
    assert (0, 1) not in eligible and (1, 0) not in eligible
    assert {(0, 2), (2, 0), (1, 2), (2, 1)} <= eligible
    assert {(0, 0), (1, 1), (2, 2)} <= eligible


def test_enumerate_sets_one_partner_per_destination():
    dest = np.array([0, 0, 0])
    relay = np.array([0, 1, 1])
    sets = enumerate_sets(dest, relay, 2)
    assert sets[1].tolist() == [[0], [1], [2]]
    assert sets[2].tolist() == [[1, 2]]
    assert enumerate_sets(dest, relay, 2, multi_relay=True)[2].shape == (3, 2)


def test_relay_counted_once_per_user():
    state = channel_state(3, 4, seed=0)
    model = PhyRateModel(state.phi, 1.0, 4, grid=fading_grid(8))
    evaluator = model.evaluator(state, [StreamId(0, 1, 1), StreamId(0, 1, 2)])
    np.testing.assert_array_equal(relay_indicator(evaluator, np.array([[0, 1]]), 3), [[0.0, 1.0, 0.0]])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exhaustive_matches_brute_force(seed):
    state = channel_state(3, 2, seed)
    model = PhyRateModel(state.phi, 1.0, 2, grid=fading_grid(8))
    params = UtilityParams(kappa=0.5)
    users = users_with([0.5, 1.0, 2.0])
    decision = Scheduler(model, params, kind=SchedulerKind.EXHAUSTIVE).schedule(state, users)
    best, value = brute_force_best(model, state, users, params, 2)
    assert decision.f_value == pytest.approx(value, rel=1e-9)
    assert make_set(decision.schedule) == best


@pytest.mark.parametrize("seed", range(5))
def test_greedy_never_beats_exhaustive(seed):
    state = channel_state(3, 2, seed)
    model = PhyRateModel(state.phi, 1.0, 2, grid=fading_grid(8))
    params = UtilityParams(kappa=1.0)
    users = users_with([1.0, 0.3, 2.0])
    exhaustive = Scheduler(model, params, kind=SchedulerKind.EXHAUSTIVE).schedule(state, users)
    greedy = Scheduler(model, params, kind=SchedulerKind.GREEDY).schedule(state, users)
    assert greedy.f_value <= exhaustive.f_value + 1e-9
    assert greedy.f_value == pytest.approx(objective_f(greedy.schedule, users, params, model, state), rel=1e-9)


def test_exhaustive_guard_points_to_greedy():
    state = channel_state(6, 4, seed=3)
    model = PhyRateModel(state.phi, 1.0, 4, grid=fading_grid(4))
    scheduler = Scheduler(model, UtilityParams(), kind=SchedulerKind.EXHAUSTIVE)
    with pytest.raises(GuardExceededError, match="greedy"):
        scheduler.schedule(state, users_with(np.ones(6)))


def test_rate_scaling_leaves_argmax_unchanged_without_relay_cost():
    state = channel_state(3, 2, seed=4)
    model = PhyRateModel(state.phi, 1.0, 2, grid=fading_grid(8))
    scheduler = Scheduler(model, UtilityParams(kappa=0.0), kind=SchedulerKind.EXHAUSTIVE)
    r = np.array([0.4, 1.1, 2.5])
    a = scheduler.schedule(state, users_with(r))
    b = scheduler.schedule(state, users_with(7.0 * r))
    assert a.schedule == b.schedule
    assert b.f_value == pytest.approx(a.f_value / 7.0, rel=1e-9)


def test_running_averages():
    users = UserState.initial(3)
    users = update_user_states(users, np.array([1.0, 2.0, 0.0]), [StreamId(0, 2, 1), StreamId(1, 1, 1)], 1)
    np.testing.assert_allclose(users.r, [1.0, 2.0, 1e-3])
    np.testing.assert_allclose(users.beta, [0.0, 0.0, 1.0])
    users = update_user_states(users, np.array([3.0, 0.0, 0.0]), [StreamId(0, 0, 1)], 2)
    np.testing.assert_allclose(users.r, [2.0, 1.0, 1e-3])
    np.testing.assert_allclose(users.beta, [0.0, 0.0, 0.5])
    assert users.beta_for_gradient()[2] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        update_user_states(users, np.zeros(3), [], 5)


def test_gradient_beta_is_capped_below_one():
    users = update_user_states(UserState.initial(2), np.zeros(2), [StreamId(0, 1, 1)], 1)
    assert users.beta[1] == 1.0
    assert users.beta_for_gradient()[1] == pytest.approx(0.5)


def test_ewma_averages():
    users = UserState.initial(3, AveragingMode.EWMA, window=10)
    users = update_user_states(users, np.array([1.0, 0.0, 0.0]), [StreamId(0, 2, 1)], 1)
    np.testing.assert_allclose(users.r, [0.9e-3 + 0.1, 1e-3, 1e-3])
    np.testing.assert_allclose(users.beta, [0.0, 0.0, 0.1])


def test_flow_control_excludes_violated_relays():
    state = channel_state(3, 2, seed=5)
    vertices, cliques = full_clique_state(state)
    # link everything: one clique over all six pairs, pushed above one
    assert cliques.size == 1
    cliques.record(list(range(len(vertices))), 1)
    model = PhyRateModel(state.phi, 1.0, 2, grid=fading_grid(8))
    scheduler = Scheduler(
        model, UtilityParams(), kind=SchedulerKind.EXHAUSTIVE, clique_state=cliques, vertices=vertices
    )
    decision = scheduler.schedule(state, users_with([1e-3, 1e-3, 1e-3]))
    assert decision.schedule
    assert all(s.is_self for s in decision.schedule)
    assert decision.eligible_pair_count == 0


def test_commit_records_cooperative_pairs():
    state = channel_state(3, 2, seed=6)
    vertices, cliques = full_clique_state(state)
    model = PhyRateModel(state.phi, 1.0, 2, grid=fading_grid(4))
    scheduler = Scheduler(model, UtilityParams(), clique_state=cliques, vertices=vertices)
    arrived = scheduler.commit([StreamId(0, 1, 1), StreamId(0, 1, 2), StreamId(2, 2, 1)], 1)
    assert arrived == [(0, 1)]
    assert cliques.exact_loads() == [Fraction(1)]


def test_barrier_objective_penalizes_touched_cliques():
    state = channel_state(3, 2, seed=7)
    vertices, cliques = full_clique_state(state)
    pair_vertex = {v: k for k, v in enumerate(vertices)}
    model = PhyRateModel(state.phi, 1.0, 2, grid=fading_grid(8))
    params = UtilityParams(kappa=0.2)
    users = users_with([1.0, 1.0, 1.0])
    relay_set = [StreamId(0, 1, 1), StreamId(0, 1, 2)]
    self_set = [StreamId(0, 0, 1), StreamId(1, 1, 1)]
    f = objective_f(relay_set, users, params, model, state)
    nB = 10.0
    value = barrier_objective(relay_set, users, params, model, state, nB, cliques, pair_vertex)
    assert value == pytest.approx(f - nB * np.exp(-nB), rel=1e-9)
    plain = objective_f(self_set, users, params, model, state)
    assert barrier_objective(self_set, users, params, model, state, nB, cliques, pair_vertex) == pytest.approx(plain)
    with pytest.raises(DomainError):
        barrier_objective(relay_set, users, params, model, state, 0.5, cliques, pair_vertex)


def test_barrier_scheduler_avoids_overloaded_cliques():
    state = channel_state(3, 2, seed=8)
    vertices, cliques = full_clique_state(state)
    cliques.record(list(range(len(vertices))), 1)
    model = PhyRateModel(state.phi, 1.0, 2, grid=fading_grid(8))
    scheduler = Scheduler(
        model,
        UtilityParams(),
        kind=SchedulerKind.BARRIER,
        barrier_index=200.0,
        clique_state=cliques,
        vertices=vertices,
    )
    decision = scheduler.schedule(state, users_with([1e-3, 1e-3, 1e-3]))
    assert decision.schedule
    assert all(s.is_self for s in decision.schedule)


def test_barrier_scheduler_needs_cliques():
    state = channel_state(2, 2, seed=9)
    model = PhyRateModel(state.phi, 1.0, 2)
    with pytest.raises(DomainError):
        Scheduler(model, UtilityParams(), kind=SchedulerKind.BARRIER, barrier_index=10.0)


def test_no_cooperation_lists_direct_streams_only():
    state = channel_state(4, 2, seed=10)
    model = PhyRateModel(state.phi, 1.0, 2)
    assert model.candidate_streams(state, cooperation=False) == [StreamId(i, i, 1) for i in range(4)]
    assert len(model.candidate_streams(state)) == 4 + 12 * 2


def test_relay_shortlist_caps_partners():
    state = channel_state(5, 2, seed=11)
    model = PhyRateModel(state.phi, 1.0, 2, relay_candidates=2)
    streams = model.candidate_streams(state)
    for i in range(5):
        assert len({s.relay for s in streams if s.dest == i and not s.is_self}) == 2


def test_delivered_equals_expected_for_direct_streams_with_perfect_csi():
    state = channel_state(3, 4, seed=12)
    model = PhyRateModel(state.phi, 1.0, 4, grid=fading_grid(8))
    schedule = [StreamId(0, 0, 1), StreamId(2, 2, 1)]
    evaluator = model.evaluator(state, schedule)
    expected = evaluator.user_rates(np.array([[0, 1]]))[0]
    delivered = model.delivered_rates(state, state, schedule)
    np.testing.assert_allclose(delivered, expected, rtol=1e-9)
    assert delivered[1] == 0.0


def test_expected_stream_rate_matches_monte_carlo():
    state = channel_state(3, 4, seed=13)
    schedule = [StreamId(0, 1, 1), StreamId(2, 2, 1)]
    coarse = PhyRateModel(state.phi, 1.0, 4, grid=fading_grid(16))
    draws = 2**17
    samples = np.sort(np.random.default_rng(13).exponential(size=draws))
    fine = PhyRateModel(state.phi, 1.0, 4, grid=FadingGrid(points=samples, weights=np.full(draws, 1.0 / draws)))
    grid_rate = expected_stream_rate(schedule, StreamId(0, 1, 1), coarse, state)
    sampled = expected_stream_rate(schedule, StreamId(0, 1, 1), fine, state)
    assert grid_rate == pytest.approx(sampled, rel=0.02)
    with pytest.raises(ValueError):
        expected_stream_rate(schedule, StreamId(1, 1, 1), coarse, state)


@pytest.mark.parametrize("seed", range(3))
def test_greedy_at_least_best_single_stream(seed):
    state = channel_state(4, 4, seed=20 + seed)
    model = PhyRateModel(state.phi, 1.0, 4, grid=fading_grid(8))
    params = UtilityParams(kappa=1.0)
    users = users_with([0.2, 1.0, 0.5, 3.0])
    decision = Scheduler(model, params, kind=SchedulerKind.GREEDY).schedule(state, users)
    single = max(objective_f([c], users, params, model, state) for c in model.candidate_streams(state))
    assert decision.f_value >= single - 1e-12


def test_greedy_with_infinite_threshold_stops_after_one_stream():
    state = channel_state(4, 4, seed=23)
    model = PhyRateModel(state.phi, 1.0, 4, grid=fading_grid(8))
    params = UtilityParams(kappa=1.0)
    users = users_with([0.2, 1.0, 0.5, 3.0])
    decision = Scheduler(model, params, greedy_eps=float("inf")).schedule(state, users)
    assert len(decision.schedule) == 1


def test_ewma_tracks_constant_input():
    users = UserState.initial(2, AveragingMode.EWMA, window=50)
    for t in range(1, 251):
        users = update_user_states(users, np.array([2.0, 0.5]), [StreamId(0, 1, 1)], t)
    np.testing.assert_allclose(users.r, [2.0, 0.5], rtol=0.01)
    assert users.beta[1] == pytest.approx(1.0, rel=0.01)
    assert users.beta[0] == 0.0


def test_utility_gradient_matches_finite_differences():
    rng = np.random.default_rng(24)
    params = UtilityParams(kappa=7.0)
    r = rng.uniform(0.1, 10.0, size=100)
    beta = rng.uniform(0.01, 0.9, size=100)
    step = 1e-6
    d_r, d_beta = utility_gradient(r, beta, params)
    fd_r = (utility(r + step, beta, params) - utility(r - step, beta, params)) / (2 * step)
    fd_beta = (utility(r, beta + step, params) - utility(r, beta - step, params)) / (2 * step)
    np.testing.assert_allclose(fd_r, d_r, rtol=1e-4)
    np.testing.assert_allclose(fd_beta, d_beta, rtol=1e-4)
