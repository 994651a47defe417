"""Quasilinear closed-loop equations and their fixed-point solution.

With the actuator replaced by ``N1 u1 + N2 u2 + m`` the loop is linear, so
the statistics of ``u1`` follow from a Lyapunov equation (standard
deviation, correlation with ``u2``) and a DC balance (mean).  The gains in
turn depend on those statistics.  The solver works in the unknowns
``(N1, N2, mu1)``; the bias ``M = E[sat]`` and the injected term
``m = M - N1 mu1 - N2 mu2`` are recovered from the gain evaluation.  Using
``mu1`` rather than ``M`` keeps the problem well defined when the plant or
controller integrates, where the mean balance fixes ``M`` but leaves ``mu1``
to the gain equations.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bivariate import BivariateStats, RHO_MAX, gains_reduced_quadrature
from .errors import (ConvergenceError, DomainError, NoConvergence,
                     NotHurwitz, NumericalError, SingularSystem)
from .lti import close_loop, dc_gain, inverse_dc_gain, is_hurwitz, open_loop
from .linearize import univariate_sl_saturation
from .specfun import std_normal_cdf

__all__ = ['SolverOptions', 'LoopSolution', 'LoopMoments', 'loop_moments',
           'statistics_from_gains', 'fixed_point_solve', 'error_statistics',
           'objective', 'existence_assumptions_report', 'mean_balance']

log = logging.getLogger(__name__)

# smallest actuator-input std handed to the gain formulas
_SIGMA_FLOOR = 1e-9


@dataclass(frozen=True)
class SolverOptions:
    """Options of `fixed_point_solve`.

    ``method`` is ``'newton'`` (falls back to Picard iteration when Newton
    stalls) or ``'picard'``.
    """
    tol: float = 1e-9
    max_iter: int = 200
    method: str = 'newton'
    damping: float = 0.5
    fd_step: float = 1e-6
    quad_tol: float = 1e-12
    initial: tuple = None

    def __post_init__(self):
        if self.method not in ('newton', 'picard'):
            raise DomainError(f"unknown solver method {self.method!r}")
        if not (self.tol > 0 and self.max_iter >= 1 and 0 < self.damping <= 1):
            raise DomainError("invalid solver options")


@dataclass(frozen=True)
class LoopSolution:
    """Converged (or last) iterate of the quasilinear loop equations."""
    gains: object
    mu1_hat: float
    sigma1_hat: float
    rho_hat: float
    mu_e: float
    sigma_e: float
    iterations: int
    residual_norm: float
    converged: bool
    hurwitz_at_solution: bool
    m: float = 0.0
    method: str = 'newton'
    residual: tuple = field(default=(), repr=False)

    @property
    def n1(self):
        return self.gains.n1

    @property
    def n2(self):
        return self.gains.n2

    @property
    def M(self):
        return self.gains.m

    def as_dict(self):
        return {'N1': self.gains.n1, 'N2': self.gains.n2, 'M': self.gains.m,
                'm': self.m, 'mu1_hat': self.mu1_hat,
                'sigma1_hat': self.sigma1_hat, 'rho_hat': self.rho_hat,
                'mu_e': self.mu_e, 'sigma_e': self.sigma_e,
                'iterations': self.iterations,
                'residual_norm': self.residual_norm,
                'converged': self.converged,
                'hurwitz_at_solution': self.hurwitz_at_solution,
                'method': self.method}


@dataclass(frozen=True)
class LoopMoments:
    """Zero-mean second-order statistics of the quasilinear loop."""
    sigma1: float
    rho: float
    sigma_e: float
    covariance: np.ndarray = field(repr=False)


def loop_moments(spec, n1, n2, ol=None):
    """Standard deviations of ``u1`` and ``e`` and the correlation of (u1, u2).

    Raises `NotHurwitz` if the quasilinear loop is unstable at ``(n1, n2)``.
    """
    cl = close_loop(spec, n1, n2, 0.0, ol)
    cov = cl.covariance()
    c1, c2, ce = cl.rows['u1'], cl.rows['u2'], cl.rows['e']
    var1 = max(float(c1 @ cov @ c1), 0.0)
    sigma1 = math.sqrt(var1)
    sigma2 = spec.bound_noise.sigma
    if sigma2 == 0 or sigma1 == 0:
        rho = 0.0
    else:
        rho = float(c1 @ cov @ c2) / (sigma1 * sigma2)
    sigma_e = math.sqrt(max(float(ce @ cov @ ce), 0.0))
    return LoopMoments(sigma1, rho, sigma_e, cov)


def _inverse_gains(spec):
    return inverse_dc_gain(spec.controller), inverse_dc_gain(spec.plant)


def mean_balance(spec, n1, n2, m):
    """Mean of ``u1`` from the DC balance of the quasilinear loop.

    ``mu1 = (mu_r / P_dc - m - N2 mu2 - mu_d) / (N1 + 1 / (C_dc P_dc))``,
    with ``1 / inf`` read as zero.
    """
    ic, ip = _inverse_gains(spec)
    den = n1 + ic * ip
    if den == 0:
        raise SingularSystem("mean balance is singular (N1 + 1/(Cdc Pdc) = 0)")
    return (spec.ref.mu * ip - m - n2 * spec.bound_noise.mu
            - spec.dist.mu) / den


def statistics_from_gains(spec, n1, n2, M=None, *, m=None, ol=None):
    """Statistics ``(mu1, sigma1, rho)`` of the actuator input implied by gains.

    Exactly one of ``M`` (expectation of the actuator output) and ``m``
    (injected bias ``M - N1 mu1 - N2 mu2``) must be given.  With ``M`` the
    mean follows from ``mu1 / (C_dc P_dc) = mu_r / P_dc - M - mu_d``, which
    is indeterminate when a DC gain is infinite; pass ``m`` in that case.
    """
    if (M is None) == (m is None):
        raise DomainError("give exactly one of M and m")
    mom = loop_moments(spec, n1, n2, ol)
    if m is not None:
        mu1 = mean_balance(spec, n1, n2, m)
    else:
        ic, ip = _inverse_gains(spec)
        if ic * ip == 0:
            raise DomainError(
                "mu1 is not determined by M when a DC gain is infinite")
        mu1 = (spec.ref.mu * ip - M - spec.dist.mu) / (ic * ip)
    return mu1, mom.sigma1, mom.rho


class _Problem:
    """Residual map of the loop equations in ``(N1, N2, mu1)``."""

    def __init__(self, spec, quad_tol):
        self.spec = spec
        self.quad_tol = quad_tol
        self.ol = open_loop(spec)
        self.ic, self.ip = _inverse_gains(spec)
        self.evaluations = 0

    def moments(self, n1, n2):
        return loop_moments(self.spec, n1, n2, self.ol)

    def gains(self, mu1, mom):
        if abs(mom.rho) > RHO_MAX:
            raise DomainError(f"implied correlation {mom.rho:.6g} leaves (-1, 1)")
        sn = self.spec.bound_noise
        stats = BivariateStats(mu1, sn.mu, max(mom.sigma1, _SIGMA_FLOOR),
                               sn.sigma, mom.rho)
        return gains_reduced_quadrature(stats, self.spec.bounds, self.quad_tol)

    def residual(self, z):
        n1, n2, mu1 = z
        self.evaluations += 1
        mom = self.moments(n1, n2)
        g = self.gains(mu1, mom)
        s = self.spec
        r3 = g.m + s.dist.mu - s.ref.mu * self.ip + mu1 * self.ic * self.ip
        return np.array([n1 - g.n1, n2 - g.n2, r3]), g, mom

    def picard_target(self, z, g):
        n1, n2, mu1 = z
        s = self.spec
        # mean balance with the fresh gains; dM/dmu1 = N1 makes this a
        # Newton step on the mean equation
        den = g.n1 + self.ic * self.ip
        if den <= 0:
            mu_new = mu1
        else:
            mu_new = (s.ref.mu * self.ip - g.m - s.dist.mu + g.n1 * mu1) / den
        return np.array([g.n1, g.n2, mu_new])


def _initial_iterate(prob):
    spec = prob.spec
    sn = spec.bound_noise
    for n1 in (1.0, 0.5, 0.1, 0.0):
        try:
            mom = prob.moments(n1, 0.0)
            mu1 = mean_balance(spec, n1, 0.0, 0.0)
        except (NotHurwitz, SingularSystem, DomainError):
            continue
        lo = spec.bounds.alpha - sn.mu
        hi = spec.bounds.beta + sn.mu
        if sn.mu < spec.bounds.threshold:
            return np.array([0.0, 0.0, mu1])
        gain, _ = univariate_sl_saturation(mu1, max(mom.sigma1, _SIGMA_FLOOR),
                                           lo, hi)
        return np.array([gain, 0.0, mu1])
    return np.array([0.5, 0.0, 0.0])


def _fd_jacobian(prob, z, r0, step):
    J = np.empty((3, 3))
    for i in range(3):
        h = step * max(1.0, abs(z[i]))
        zp = z.copy()
        # stay inside [0, 1] for N1
        if i == 0 and zp[0] + h > 1.0:
            h = -h
        zp[i] += h
        J[:, i] = (prob.residual(zp)[0] - r0) / h
    return J


def _valid(z):
    return 0.0 <= z[0] <= 1.0 and abs(z[1]) <= 1.0


def _newton(prob, z, opts, it0=0):
    r, g, mom = prob.residual(z)
    it = it0
    while it < opts.max_iter:
        if np.max(np.abs(r)) <= opts.tol:
            return z, r, g, mom, it, True
        it += 1
        try:
            J = _fd_jacobian(prob, z, r, opts.fd_step)
            step = np.linalg.solve(J, -r)
        except (np.linalg.LinAlgError, NumericalError, DomainError):
            return z, r, g, mom, it, False
        if not np.all(np.isfinite(step)):
            return z, r, g, mom, it, False
        lam = 1.0
        norm0 = np.linalg.norm(r)
        accepted = False
        while lam > 1e-6:
            zn = z + lam * step
            if _valid(zn):
                try:
                    rn, gn, mn = prob.residual(zn)
                except (NotHurwitz, DomainError, ConvergenceError):
                    rn = None
                if rn is not None and np.linalg.norm(rn) < (1 - 1e-4 * lam) * norm0:
                    z, r, g, mom = zn, rn, gn, mn
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            return z, r, g, mom, it, False
    return z, r, g, mom, it, np.max(np.abs(r)) <= opts.tol


def _picard(prob, z, opts, it0=0):
    r, g, mom = prob.residual(z)
    it = it0
    w = opts.damping
    while it < opts.max_iter:
        if np.max(np.abs(r)) <= opts.tol:
            return z, r, g, mom, it, True
        it += 1
        target = prob.picard_target(z, g)
        lam = w
        while True:
            zn = (1 - lam) * z + lam * target
            try:
                rn, gn, mn = prob.residual(zn)
                break
            except (NotHurwitz, DomainError):
                lam *= 0.5
                if lam < 1e-6:
                    return z, r, g, mom, it, False
        z, r, g, mom = zn, rn, gn, mn
    return z, r, g, mom, it, np.max(np.abs(r)) <= opts.tol


def _safe_start(prob, z):
    """Pull the starting point towards N1 = 0 until the loop is stable."""
    for shrink in (1.0, 0.5, 0.25, 0.1, 0.0):
        zt = z.copy()
        zt[0] *= shrink
        zt[1] *= shrink
        try:
            prob.residual(zt)
            return zt
        except (NotHurwitz, DomainError):
            continue
    raise NotHurwitz("no stable iterate found for the quasilinear loop")


def fixed_point_solve(spec, opts=None):
    """Solve the quasilinear loop equations for ``N1``, ``N2`` and ``M``.

    Parameters
    ----------
    spec : LoopSpec
        Loop description.
    opts : SolverOptions, optional
        Tolerance (max-norm of the three residuals), iteration limit and
        method.

    Returns
    -------
    LoopSolution

    Raises
    ------
    NoConvergence
        If the iteration limit is reached before the tolerance.
    NotHurwitz
        If no iterate with a stable quasilinear loop can be found.
    DomainError
        If the implied correlation leaves (-1, 1).

    """
    opts = opts or SolverOptions()
    prob = _Problem(spec, opts.quad_tol)
    z0 = (np.array(opts.initial, dtype=float) if opts.initial is not None
          else _initial_iterate(prob))
    z0 = _safe_start(prob, z0)

    method = opts.method
    if method == 'newton':
        z, r, g, mom, it, ok = _newton(prob, z0, opts)
        if not ok:
            log.debug("Newton stalled after %d iterations; switching to "
                      "damped fixed-point iteration", it)
            method = 'picard'
            z, r, g, mom, it, ok = _picard(prob, z, opts, it)
            if ok:
                # polish: Newton from the Picard point usually finishes quickly
                z2, r2, g2, mom2, it2, ok2 = _newton(prob, z, opts, it)
                if ok2:
                    z, r, g, mom, it = z2, r2, g2, mom2, it2
    else:
        z, r, g, mom, it, ok = _picard(prob, z0, opts)

    resnorm = float(np.max(np.abs(r)))
    if not ok:
        raise NoConvergence(
            f"loop equations not solved after {it} iterations "
            f"(residual {resnorm:.3g})")
    n1, n2, mu1 = z
    cl = close_loop(spec, g.n1, g.n2, 0.0, prob.ol)
    m = g.m - g.n1 * mu1 - g.n2 * spec.bound_noise.mu
    mu_e = mu1 * prob.ic
    return LoopSolution(
        gains=g, mu1_hat=float(mu1), sigma1_hat=mom.sigma1, rho_hat=mom.rho,
        mu_e=float(mu_e), sigma_e=mom.sigma_e, iterations=it,
        residual_norm=resnorm, converged=True,
        hurwitz_at_solution=is_hurwitz(cl.A), m=float(m), method=method,
        residual=tuple(float(x) for x in r))


def error_statistics(spec, solution):
    """Mean and standard deviation of the tracking error of the quasilinear loop.

    The mean is ``mu1 / C_dc`` (zero for an integrating controller); the
    standard deviation comes from the stationary covariance.
    """
    ic = inverse_dc_gain(spec.controller)
    mom = loop_moments(spec, solution.gains.n1, solution.gains.n2)
    return solution.mu1_hat * ic, mom.sigma_e


def objective(solution, gamma=1.0):
    """``mu_e^2 + sigma_e^2 + gamma (mu1^2 + sigma1^2)``."""
    return (solution.mu_e ** 2 + solution.sigma_e ** 2
            + gamma * (solution.mu1_hat ** 2 + solution.sigma1_hat ** 2))


def _output_range(spec):
    """Limits of ``E[sat]`` as ``mu1`` runs from -inf to +inf."""
    sn = spec.bound_noise
    thr = spec.bounds.threshold
    if sn.sigma == 0:
        if sn.mu < thr:
            return 0.0, 0.0
        return spec.bounds.alpha - sn.mu, spec.bounds.beta + sn.mu
    z = (thr - sn.mu) / sn.sigma
    p = float(std_normal_cdf(-z))
    # E[u2 1{u2 >= thr}] for u2 ~ N(mu2, sigma2^2)
    partial = sn.mu * p + sn.sigma * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return spec.bounds.alpha * p - partial, spec.bounds.beta * p + partial


def existence_assumptions_report(spec, grid=11):
    """Check the verifiable assumptions of the existence result (advisory).

    * the quasilinear loop is stable on a grid over N1 in (0, 1] and
      N2 in [-1, 1]; the open loop (N1 = 0) is reported separately since
      it is only marginally stable for an integrating plant or controller;
    * DC-gain classification of plant and controller;
    * with an infinite DC gain, the forced value of ``M`` lies strictly
      inside the range of ``E[sat]``.
    """
    ol = open_loop(spec)

    def stable(n1, n2):
        try:
            return is_hurwitz(close_loop(spec, n1, n2, 0.0, ol).A)
        except NumericalError:
            return False

    violations = []
    for n1 in np.linspace(0.0, 1.0, grid)[1:]:
        for n2 in np.linspace(-1.0, 1.0, grid):
            if not stable(n1, n2):
                violations.append([float(n1), float(n2)])
    c_dc = dc_gain(spec.controller)
    p_dc = dc_gain(spec.plant)
    report = {
        'hurwitz_grid': {'resolution': grid, 'points': (grid - 1) * grid,
                         'violations': violations,
                         'all_hurwitz': not violations,
                         'open_loop_hurwitz': stable(0.0, 0.0)},
        'dc_gains': {'controller': c_dc, 'plant': p_dc,
                     'controller_infinite': math.isinf(c_dc),
                     'plant_infinite': math.isinf(p_dc)},
    }
    if math.isinf(c_dc) or math.isinf(p_dc):
        ip = 0.0 if math.isinf(p_dc) else 1.0 / p_dc
        target = spec.ref.mu * ip - spec.dist.mu
        lo, hi = _output_range(spec)
        report['mean_membership'] = {'required_M': target, 'range': [lo, hi],
                                     'satisfied': lo < target < hi}
    else:
        report['mean_membership'] = None
    report['ok'] = (report['hurwitz_grid']['all_hurwitz']
                    and (report['mean_membership'] is None
                         or report['mean_membership']['satisfied']))
    return report
