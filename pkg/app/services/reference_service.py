"""
Reference Service: small-instance solver for the long-run utility problem
over occupancy variables, its exponential-barrier variant, and the
fairness-inequality check at solved optima.

Variables are alpha_sk, the mass on schedule set s in known state k; the
fading dimension is expanded as alpha_skz = alpha_sk q_z, which makes the
decision independent of the fading state by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from app.core.exceptions import DomainError
from app.models import ScheduleSet
from app.models.stream import cooperative_pairs, relay_users
from app.schemas.reference import RateTable, SolveReport, SolveRequest

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITER = 5000
FEASIBILITY_TOL = 1e-8
FAIRNESS_TOL = 1e-6


@dataclass(frozen=True)
class ReferenceProblem:
    """Linear maps from alpha (flattened s-major) to rates, relay fractions and clique loads."""

    sets: list[ScheduleSet]
    p: np.ndarray  # (K,)
    q: np.ndarray  # (Z,)
    kappa: float
    rate_map: np.ndarray  # (n, S*K)
    relay_map: np.ndarray  # (n, S*K)
    clique_map: np.ndarray  # (nQ, S*K)

    @property
    def num_sets(self) -> int:
        return len(self.sets)

    @property
    def num_states(self) -> int:
        return int(self.p.size)

    @property
    def num_users(self) -> int:
        return int(self.rate_map.shape[0])

    @property
    def size(self) -> int:
        return self.num_sets * self.num_states

    @classmethod
    def from_table(cls, table: RateTable) -> "ReferenceProblem":
        sets = table.schedule_sets()
        p = np.asarray(table.p, dtype=float)
        q = np.asarray(table.q, dtype=float)
        rates = np.asarray(table.rates, dtype=float)  # (S, K, Z, n)
        S, K, n = len(sets), p.size, table.num_users
        rate_map = np.einsum("skzi,z->isk", rates, q).reshape(n, S * K)
        relay_map = np.zeros((n, S, K))
        for s, schedule in enumerate(sets):
            for j in relay_users(schedule):
                relay_map[j, s, :] = 1.0
        availability = table.availability_map()
        cliques = table.clique_pairs()
        clique_map = np.zeros((len(cliques), S, K))
        for c, clique in enumerate(cliques):
            members = set(clique)
            for s, schedule in enumerate(sets):
                clique_map[c, s, :] = sum(1.0 / availability[pair] for pair in cooperative_pairs(schedule) if pair in members)
        return cls(
            sets=sets,
            p=p,
            q=q,
            kappa=table.kappa,
            rate_map=rate_map,
            relay_map=relay_map.reshape(n, S * K),
            clique_map=clique_map.reshape(len(cliques), S * K),
        )

    def user_values(self, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(r(alpha), beta(alpha))."""
        return self.rate_map @ alpha, self.relay_map @ alpha

    def clique_loads(self, alpha: np.ndarray) -> np.ndarray:
        return self.clique_map @ alpha

    def state_mass(self, alpha: np.ndarray) -> np.ndarray:
        return alpha.reshape(self.num_sets, self.num_states).sum(axis=0)

    def occupancy(self, alpha: np.ndarray) -> np.ndarray:
        """alpha_skz = alpha_sk q_z, shape (S, K, Z)."""
        return alpha.reshape(self.num_sets, self.num_states)[:, :, None] * self.q[None, None, :]

    def is_feasible(self, alpha: np.ndarray, with_cliques: bool = True, tol: float = FEASIBILITY_TOL) -> bool:
        if np.any(alpha < -tol) or np.any(self.state_mass(alpha) > self.p + tol):
            return False
        return not with_cliques or bool(np.all(self.clique_loads(alpha) <= 1 + tol))


def clique_penalty(problem: ReferenceProblem, alpha: np.ndarray, barrier_index: float) -> float:
    """sum_Q exp(nB (alpha^Q - 1)); alpha = 0 gives |Q| exp(-nB)."""
    exponent = barrier_index * (problem.clique_loads(alpha) - 1.0)
    return float(np.sum(np.exp(np.minimum(exponent, 700.0))))


@dataclass
class SolveResult:
    alpha: np.ndarray
    value: float
    iterations: int
    fw_gap: float
    converged: bool
    history: list[float] = field(default_factory=list)
    barrier_index: Optional[float] = None


class ReferenceSolver:
    """
    Away-step conditional gradient. The linear subproblem is a per-state
    argmax over schedule sets, replaced by an exact LP when that choice
    breaks a clique constraint.
    """

    def __init__(
        self,
        problem: ReferenceProblem,
        barrier_index: Optional[float] = None,
        tolerance: float = DEFAULT_TOLERANCE,
        max_iter: int = DEFAULT_MAX_ITER,
        step_rule: str = "line_search",
    ):
        if barrier_index is not None and barrier_index < 1:
            raise DomainError("barrier index must be at least 1")
        if step_rule not in ("line_search", "open_loop"):
            raise ValueError(f"unknown step rule {step_rule!r}")
        self.problem = problem
        self.barrier_index = barrier_index
        self.tolerance = tolerance
        self.max_iter = max_iter
        self.step_rule = step_rule
        self.constrained = barrier_index is None and problem.clique_map.shape[0] > 0

    # objective

    def value(self, alpha: np.ndarray) -> float:
        pb = self.problem
        r, beta = pb.user_values(alpha)
        if np.any(r <= 0) or (pb.kappa > 0 and np.any(beta >= 1)):
            return -np.inf
        total = float(np.sum(np.log(r)))
        if pb.kappa > 0:
            total += pb.kappa * float(np.sum(np.log1p(-beta)))
        if self.barrier_index is not None:
            total -= clique_penalty(pb, alpha, self.barrier_index)
        return total

    def gradient(self, alpha: np.ndarray) -> np.ndarray:
        pb = self.problem
        r, beta = pb.user_values(alpha)
        grad = pb.rate_map.T @ (1.0 / r)
        if pb.kappa > 0:
            grad -= pb.relay_map.T @ (pb.kappa / (1.0 - beta))
        if self.barrier_index is not None:
            nB = self.barrier_index
            exponent = np.minimum(nB * (pb.clique_loads(alpha) - 1.0), 700.0)
            grad -= pb.clique_map.T @ (nB * np.exp(exponent))
        return grad

    # linear subproblem

    def linear_oracle(self, grad: np.ndarray) -> np.ndarray:
        pb = self.problem
        S, K = pb.num_sets, pb.num_states
        g = grad.reshape(S, K)
        vertex = np.zeros((S, K))
        for k in range(K):
            s = int(np.argmax(g[:, k]))
            if g[s, k] > 0:
                vertex[s, k] = pb.p[k]
        vertex = vertex.reshape(-1)
        if not self.constrained or np.all(pb.clique_loads(vertex) <= 1 + 1e-12):
            return vertex
        state_rows = np.stack([np.kron(np.ones(S), np.eye(K)[k]) for k in range(K)])
        A_ub = np.vstack([state_rows, pb.clique_map])
        b_ub = np.concatenate([pb.p, np.ones(pb.clique_map.shape[0])])
        result = linprog(-grad, A_ub=A_ub, b_ub=b_ub, bounds=(0, None), method="highs-ds")
        if not result.success:
            raise DomainError(f"clique-coupled subproblem failed: {result.message}")
        return np.clip(result.x, 0.0, None)

    # start

    def initial_atoms(self) -> list[np.ndarray]:
        """One atom per set: mass p_k on that set in every state, scaled into the clique constraints."""
        pb = self.problem
        S, K = pb.num_sets, pb.num_states
        atoms = []
        for s in range(S):
            atom = np.zeros((S, K))
            atom[s, :] = pb.p
            atom = atom.reshape(-1)
            if self.constrained:
                peak = pb.clique_loads(atom).max(initial=0.0)
                if peak > 1:
                    atom = atom / peak
            atoms.append(atom)
        start = np.mean(atoms, axis=0)
        r, _ = pb.user_values(start)
        starved = np.flatnonzero(r <= 0)
        if starved.size:
            raise DomainError(f"user(s) {starved.tolist()} get no rate from any schedule set")
        return atoms

    def _domain_cap(self, alpha: np.ndarray, direction: np.ndarray) -> float:
        pb = self.problem
        r, beta = pb.user_values(alpha)
        dr, db = pb.user_values(direction)
        cap = np.inf
        shrinking = dr < 0
        if np.any(shrinking):
            cap = min(cap, float(np.min(r[shrinking] / -dr[shrinking])))
        if pb.kappa > 0:
            growing = db > 0
            if np.any(growing):
                cap = min(cap, float(np.min((1.0 - beta[growing]) / db[growing])))
        return cap

    def _line_search(self, alpha: np.ndarray, direction: np.ndarray, step_max: float) -> float:
        cap = self._domain_cap(alpha, direction)
        upper = step_max if cap > step_max else cap * (1.0 - 1e-12)
        if upper <= 0:
            return 0.0
        result = minimize_scalar(
            lambda t: -self.value(alpha + t * direction),
            bounds=(0.0, upper),
            method="bounded",
            options={"xatol": 1e-12},
        )
        step = float(result.x)
        if upper == step_max and self.value(alpha + step_max * direction) >= self.value(alpha + step * direction):
            step = step_max
        if self.value(alpha + step * direction) < self.value(alpha):
            step = 0.0
        return step

    # main loop

    def solve(self) -> SolveResult:
        atoms = self.initial_atoms()
        weights = [1.0 / len(atoms)] * len(atoms)
        alpha = np.sum([w * a for w, a in zip(weights, atoms)], axis=0)
        history = [self.value(alpha)]
        gap = np.inf
        converged = False
        iteration = 0
        for iteration in range(1, self.max_iter + 1):
            grad = self.gradient(alpha)
            vertex = self.linear_oracle(grad)
            gap = float(grad @ (vertex - alpha))
            if gap < self.tolerance:
                converged = True
                break

            if self.step_rule == "open_loop":
                step = 2.0 / (iteration + 2.0)
                weights = [w * (1.0 - step) for w in weights]
                atoms.append(vertex)
                weights.append(step)
                alpha = alpha + step * (vertex - alpha)
            else:
                scores = [float(grad @ a) for a in atoms]
                away = int(np.argmin(scores))
                away_gap = float(grad @ alpha) - scores[away]
                if gap >= away_gap:
                    direction, step_max = vertex - alpha, 1.0
                    step = self._line_search(alpha, direction, step_max)
                    if step >= step_max:
                        atoms, weights = [vertex], [1.0]
                    else:
                        weights = [w * (1.0 - step) for w in weights]
                        match = next((m for m, a in enumerate(atoms) if np.allclose(a, vertex, rtol=0.0, atol=1e-12)), None)
                        if match is None:
                            atoms.append(vertex)
                            weights.append(step)
                        else:
                            weights[match] += step
                else:
                    w_away = weights[away]
                    direction, step_max = alpha - atoms[away], w_away / (1.0 - w_away)
                    step = self._line_search(alpha, direction, step_max)
                    weights = [w * (1.0 + step) for w in weights]
                    if step >= step_max:
                        del atoms[away], weights[away]
                    else:
                        weights[away] -= step
                alpha = alpha + step * direction
            alpha = np.clip(alpha, 0.0, None)
            history.append(self.value(alpha))

        logger.info(
            "reference solve%s: value %.8f after %d iterations (gap %.2e, %s)",
            "" if self.barrier_index is None else f" (barrier {self.barrier_index:g})",
            history[-1],
            iteration,
            gap,
            "converged" if converged else "iteration limit",
        )
        return SolveResult(
            alpha=alpha,
            value=history[-1],
            iterations=iteration,
            fw_gap=gap,
            converged=converged,
            history=history,
            barrier_index=self.barrier_index,
        )

    def report(self, result: SolveResult) -> SolveReport:
        pb = self.problem
        r, beta = pb.user_values(result.alpha)
        return SolveReport(
            opt_value=result.value,
            alpha=result.alpha.reshape(pb.num_sets, pb.num_states).tolist(),
            rates=r.tolist(),
            relay_fractions=beta.tolist(),
            clique_loads=pb.clique_loads(result.alpha).tolist(),
            iterations=result.iterations,
            fw_gap=result.fw_gap,
            converged=result.converged,
            barrier_index=result.barrier_index,
        )


def solve_opt3(problem: ReferenceProblem, tolerance: float = DEFAULT_TOLERANCE, max_iter: int = DEFAULT_MAX_ITER) -> SolveResult:
    """Utility maximum subject to the state-mass and clique constraints."""
    return ReferenceSolver(problem, tolerance=tolerance, max_iter=max_iter).solve()


def solve_optn(
    problem: ReferenceProblem,
    barrier_index: float,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SolveResult:
    """Barrier variant: clique constraints replaced by -sum_Q exp(nB (alpha^Q - 1))."""
    return ReferenceSolver(problem, barrier_index=barrier_index, tolerance=tolerance, max_iter=max_iter).solve()


def check_fairness(
    opt_point: tuple[np.ndarray, np.ndarray],
    point: tuple[np.ndarray, np.ndarray],
    kappa: float,
    tol: float = FAIRNESS_TOL,
) -> bool:
    """
    sum_i (r_i - r~_i)/r~_i <= kappa sum_i ((1 - b~_i) - (1 - b_i))/(1 - b~_i) + tol,
    with (r~, b~) the optimum and (r, b) any feasible point.
    """
    r_opt, beta_opt = (np.asarray(x, dtype=float) for x in opt_point)
    r, beta = (np.asarray(x, dtype=float) for x in point)
    if np.any(beta_opt >= 1) or np.any(r_opt <= 0):
        raise DomainError("optimum must have r > 0 and beta < 1")
    gains = float(np.sum((r - r_opt) / r_opt))
    relay_cost = float(np.sum(((1.0 - beta_opt) - (1.0 - beta)) / (1.0 - beta_opt)))
    return gains <= kappa * relay_cost + tol


def random_feasible_point(problem: ReferenceProblem, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet mass per state (idle included), shrunk into the clique constraints."""
    S, K = problem.num_sets, problem.num_states
    alpha = np.zeros((S, K))
    for k in range(K):
        alpha[:, k] = rng.dirichlet(np.ones(S + 1))[:S] * problem.p[k]
    alpha = alpha.reshape(-1)
    peak = problem.clique_loads(alpha).max(initial=0.0)
    if peak > 1:
        alpha = alpha / peak
    return alpha


def perturbed_points(
    problem: ReferenceProblem,
    alpha_opt: np.ndarray,
    rng: np.random.Generator,
    count: int,
) -> list[np.ndarray]:
    """Feasible points alpha* + t (x - alpha*), x random feasible, t in (0, 1)."""
    out = []
    for _ in range(count):
        target = random_feasible_point(problem, rng)
        t = rng.uniform(0.0, 1.0)
        out.append(alpha_opt + t * (target - alpha_opt))
    return out


def solve_table(request: SolveRequest) -> SolveReport:
    """Build the problem from a rate table, solve it, and report the optimum."""
    problem = ReferenceProblem.from_table(request.table)
    solver = ReferenceSolver(
        problem,
        barrier_index=request.barrier_index,
        tolerance=request.tolerance,
        max_iter=request.max_iter,
    )
    return solver.report(solver.solve())
