"""Optimal proportional gain for the quasilinear loop.

The cost ``mu_e^2 + sigma_e^2 + gamma (mu1^2 + sigma1^2)`` is evaluated at
the solution of the loop equations for each candidate gain ``k``; the
search is a log-spaced grid followed by golden-section refinement in
``log k`` around the best grid point.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AllEvaluationsFailed, DomainError, EvaluationFailed, QLCError
from .loop import SolverOptions, fixed_point_solve, objective as loop_objective
from .lti import StateSpace

__all__ = ['DesignProblem', 'DesignResult', 'CurvePoint', 'objective',
           'evaluate', 'optimize_gain', 'objective_curve',
           'write_objective_curve_csv']

log = logging.getLogger(__name__)

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DesignProblem:
    """Loop template whose controller is replaced by the gain ``k``."""
    spec_template: object
    gamma: float = 1.0
    k_bounds: tuple = (1e-2, 1e3)
    k_init: float = 100.0
    grid_points: int = 40
    rel_tol: float = 1e-4
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        lo, hi = self.k_bounds
        if not (0 < lo < hi):
            raise DomainError(f"k_bounds must satisfy 0 < k_min < k_max, got {self.k_bounds}")
        if not lo <= self.k_init <= hi:
            raise DomainError("k_init must lie within k_bounds")
        if not self.gamma > 0:
            raise DomainError("gamma must be positive")
        if self.grid_points < 3:
            raise DomainError("grid_points must be at least 3")

    def spec(self, k):
        return self.spec_template.with_controller(StateSpace.gain(k))


@dataclass(frozen=True)
class CurvePoint:
    k: float
    cost: float
    converged: bool
    reason: str = ''


@dataclass(frozen=True)
class DesignResult:
    k_opt: float
    cost_opt: float
    cost_init: float
    solution_at_opt: object
    evaluations: int
    curve: tuple = field(default=(), repr=False)

    def as_dict(self):
        return {'k_opt': self.k_opt, 'cost_opt': self.cost_opt,
                'cost_init': self.cost_init, 'evaluations': self.evaluations,
                'solution_at_opt': self.solution_at_opt.as_dict()}


def evaluate(problem, k, initial=None):
    """Loop solution and cost at gain ``k``.

    Raises
    ------
    EvaluationFailed
        Wrapping the solver error (no convergence, unstable loop, ...).

    """
    opts = problem.solver
    if initial is not None:
        opts = SolverOptions(tol=opts.tol, max_iter=opts.max_iter,
                             method=opts.method, damping=opts.damping,
                             fd_step=opts.fd_step, quad_tol=opts.quad_tol,
                             initial=tuple(initial))
    try:
        sol = fixed_point_solve(problem.spec(k), opts)
    except QLCError as exc:
        if initial is not None:
            return evaluate(problem, k)
        raise EvaluationFailed(f"k = {k:.6g}: {type(exc).__name__}: {exc}") from exc
    return sol, loop_objective(sol, problem.gamma)


def objective(problem, k):
    """Cost at the quasilinear loop solution for the gain ``k``."""
    return evaluate(problem, k)[1]


def _start(sol):
    return (sol.gains.n1, sol.gains.n2, sol.mu1_hat)


def _grid_eval(problem, ks, threads):
    def one(k):
        try:
            sol, cost = evaluate(problem, k)
            return CurvePoint(float(k), float(cost), True), sol
        except EvaluationFailed as exc:
            log.info("objective evaluation failed: %s", exc)
            return CurvePoint(float(k), math.inf, False, str(exc)), None

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, ks))
    return [one(k) for k in ks]


def objective_curve(problem, ks, threads=1):
    """Cost over the gains ``ks`` as `CurvePoint` records."""
    return [p for p, _ in _grid_eval(problem, list(ks), threads)]


def optimize_gain(problem, threads=1):
    """Minimise the cost over ``k`` in ``problem.k_bounds``.

    Failed evaluations count as ``+inf``.  The result never has a higher cost
    than the initial gain.

    Raises
    ------
    AllEvaluationsFailed
        If no grid point yields a converged loop solution.

    """
    lo, hi = problem.k_bounds
    ks = np.logspace(math.log10(lo), math.log10(hi), problem.grid_points)
    grid = _grid_eval(problem, ks, threads)
    evaluations = len(grid)
    costs = np.array([p.cost for p, _ in grid])
    if not np.any(np.isfinite(costs)):
        raise AllEvaluationsFailed("no gain on the grid gives a converged solution")
    best = int(np.argmin(costs))
    best_sol = grid[best][1]
    best_k, best_cost = ks[best], costs[best]
    curve = [p for p, _ in grid]

    a = math.log(ks[max(best - 1, 0)])
    b = math.log(ks[min(best + 1, ks.size - 1)])
    cache = {}

    def f(logk):
        nonlocal evaluations, best_k, best_cost, best_sol
        if logk in cache:
            return cache[logk]
        k = math.exp(logk)
        evaluations += 1
        try:
            sol, cost = evaluate(problem, k, _start(best_sol))
        except EvaluationFailed as exc:
            curve.append(CurvePoint(k, math.inf, False, str(exc)))
            cache[logk] = math.inf
            return math.inf
        curve.append(CurvePoint(k, cost, True))
        if cost < best_cost:
            best_k, best_cost, best_sol = k, cost, sol
        cache[logk] = cost
        return cost

    # golden-section search in log k; stop when the bracket is rel_tol wide
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    tol = math.log1p(problem.rel_tol)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)

    try:
        init_sol, cost_init = evaluate(problem, problem.k_init)
        evaluations += 1
    except EvaluationFailed:
        cost_init = math.inf
    else:
        if cost_init < best_cost:
            best_k, best_cost, best_sol = problem.k_init, cost_init, init_sol
    curve.sort(key=lambda p: p.k)
    return DesignResult(float(best_k), float(best_cost), float(cost_init),
                        best_sol, evaluations, tuple(curve))


def write_objective_curve_csv(path, curve):
    """Write ``k, cost, converged`` rows."""
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['k', 'cost', 'converged'])
        for p in curve:
            w.writerow([format(p.k, '.17g'), format(p.cost, '.17g'),
                        int(p.converged)])
    return path
