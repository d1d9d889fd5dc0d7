import sys
import os
import json

import numpy as np
import pytest

# Add current dir to path
sys.path.append(os.getcwd())

from app.core.exceptions import DomainError
from app.schemas.reference import RateTable, SolveRequest
from app.services.reference_service import (
    ReferenceProblem,
    ReferenceSolver,
    check_fairness,
    clique_penalty,
    perturbed_points,
    random_feasible_point,
    solve_opt3,
    solve_optn,
    solve_table,
)


def tiny_table() -> RateTable:
    with open("configs/tiny_table.json") as fh:
        return RateTable.model_validate(json.load(fh))


def two_set_table() -> RateTable:
    # user 0 direct, or user 1 through relay 0
    return RateTable(
        num_users=2,
        sets=[[[0, 0, 1]], [[1, 0, 1]]],
        p=[0.5, 0.5],
        q=[0.5, 0.5],
        rates=[
            [[[2.0, 0.0], [2.0, 0.0]], [[1.0, 0.0], [1.0, 0.0]]],
            [[[0.0, 1.0], [0.0, 2.0]], [[0.0, 3.0], [0.0, 3.0]]],
        ],
        kappa=1.0,
    )


def test_problem_maps():
    problem = ReferenceProblem.from_table(tiny_table())
    assert problem.size == 6
    # set 2 relays through user 0 in both states
    np.testing.assert_array_equal(problem.relay_map[0], [0, 0, 0, 0, 1, 1])
    np.testing.assert_allclose(problem.rate_map[1, 4:], [1.6, 2.2])
    np.testing.assert_array_equal(problem.clique_map, [[0, 0, 0, 0, 1, 1]])


def test_availability_scales_clique_loads():
    raw = tiny_table().model_dump()
    raw["availability"] = [{"i": 1, "j": 0, "p": 0.25}]
    table = RateTable.model_validate(raw)
    problem = ReferenceProblem.from_table(table)
    np.testing.assert_allclose(problem.clique_map, [[0, 0, 0, 0, 4, 4]])


def test_solver_converges_on_tiny_table():
    problem = ReferenceProblem.from_table(tiny_table())
    result = solve_opt3(problem)
    assert result.converged
    assert result.fw_gap < 1e-6
    assert problem.is_feasible(result.alpha)
    assert np.all(np.diff(result.history) >= -1e-12)


def test_solver_matches_grid_search():
    table = two_set_table()
    result = solve_opt3(ReferenceProblem.from_table(table))

    grid = np.round(np.arange(0.0, 0.5 + 1e-9, 0.01), 2)
    a00, a01, a10, a11 = np.meshgrid(grid, grid, grid, grid, indexing="ij", sparse=True)
    r0 = 2.0 * a00 + 1.0 * a01
    r1 = 1.5 * a10 + 3.0 * a11
    beta0 = a10 + a11
    feasible = (a00 + a10 <= 0.5 + 1e-12) & (a01 + a11 <= 0.5 + 1e-12) & (r0 > 0) & (r1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(r0) + np.log(r1) + table.kappa * np.log1p(-beta0)
    best = float(np.max(np.where(feasible, value, -np.inf)))

    assert result.value >= best - 1e-9
    assert result.value - best <= 0.05


def test_barrier_value_close_to_constrained_optimum():
    problem = ReferenceProblem.from_table(tiny_table())
    plain = solve_opt3(problem)
    barrier = solve_optn(problem, 200.0)
    assert barrier.converged
    assert abs(barrier.value - plain.value) <= 1e-3


def test_clique_penalty_at_zero():
    problem = ReferenceProblem.from_table(tiny_table())
    assert clique_penalty(problem, np.zeros(problem.size), 5.0) == pytest.approx(np.exp(-5.0))


def test_barrier_index_below_one_rejected():
    with pytest.raises(DomainError):
        ReferenceSolver(ReferenceProblem.from_table(tiny_table()), barrier_index=0.5)


@pytest.mark.parametrize("kappa", [0.0, 1.0, 7.0])
def test_fairness_at_optimum(kappa):
    table = tiny_table().model_copy(update={"kappa": kappa})
    problem = ReferenceProblem.from_table(table)
    result = solve_opt3(problem)
    assert result.converged
    opt = problem.user_values(result.alpha)
    rng = np.random.default_rng(int(kappa) + 11)
    for alpha in perturbed_points(problem, result.alpha, rng, 100):
        assert problem.is_feasible(alpha)
        assert check_fairness(opt, problem.user_values(alpha), kappa)


def test_random_feasible_points_respect_constraints():
    problem = ReferenceProblem.from_table(tiny_table())
    rng = np.random.default_rng(2)
    for _ in range(50):
        assert problem.is_feasible(random_feasible_point(problem, rng))


def test_open_loop_step_rule_approaches_optimum():
    problem = ReferenceProblem.from_table(tiny_table())
    exact = solve_opt3(problem)
    slow = ReferenceSolver(problem, step_rule="open_loop", max_iter=3000).solve()
    assert slow.value <= exact.value + 1e-6
    assert exact.value - slow.value <= 0.05
    with pytest.raises(ValueError):
        ReferenceSolver(problem, step_rule="halving")


def test_starved_user_rejected():
    table = RateTable(
        num_users=2,
        sets=[[[0, 0, 1]]],
        p=[1.0],
        q=[1.0],
        rates=[[[[1.0, 0.0]]]],
    )
    with pytest.raises(DomainError):
        solve_opt3(ReferenceProblem.from_table(table))


def test_solve_table_report():
    report = solve_table(SolveRequest(table=tiny_table()))
    assert report.converged
    assert len(report.alpha) == 3 and len(report.alpha[0]) == 2
    assert all(load <= 1 + 1e-8 for load in report.clique_loads)
    assert report.barrier_index is None
    barrier = solve_table(SolveRequest(table=tiny_table(), barrier_index=200.0))
    assert barrier.barrier_index == 200.0
    assert barrier.opt_value == pytest.approx(report.opt_value, abs=1e-3)


def test_rate_table_validation():
    with pytest.raises(ValueError):
        RateTable(num_users=1, sets=[[[0, 0, 1]]], p=[0.6], q=[1.0], rates=[[[[1.0]]]])
    with pytest.raises(ValueError):
        RateTable(num_users=1, sets=[[[0, 0, 1]]], p=[1.0], q=[1.0], rates=[[[[1.0, 2.0]]]])
