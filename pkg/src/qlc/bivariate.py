"""Bivariate saturation and its quasilinear gains.

The actuator output is ``u1`` clipped to ``[alpha - u2, beta + u2]`` while
``u2 >= max(-beta, alpha)``, and zero below that threshold.  For jointly
Gaussian ``(u1, u2)`` the gains ``N1 = E[d sat / d u1]``,
``N2 = E[d sat / d u2]`` and bias ``M = E[sat]`` are available three ways:

* raw 2-D quadrature of the joint density (slow reference),
* 1-D quadrature after whitening the pair, with the inner integral in
  closed form (the production path),
* a closed form built from the series for L plus R and S, valid when both
  series slopes are below one in magnitude.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sp_integrate
from scipy import special

from .errors import DomainError
from .linearize import univariate_sl_saturation
from .quadrature import integrate_semi_infinite
from .specfun import (DEFAULT_MAX_TERMS, DEFAULT_TOL_PERCENT, integral_L,
                      integral_R, integral_S, rho_admissible, std_normal_cdf)

__all__ = ['SatBounds', 'BivariateStats', 'GainMethod', 'QuasilinearGains',
           'sat_eval', 'sat_gradient', 'not_saturated', 'transform_limits',
           'gamma_pair', 'series_coefficients', 'gains_reduced_quadrature',
           'gains_raw_quadrature', 'gains_series', 'prob_not_saturated',
           'compute_gains', 'RHO_MAX']

RHO_MAX = 0.999
DEFAULT_ABS_TOL = 1e-9

_SQRT2 = math.sqrt(2.0)
_SQRT_PI = math.sqrt(math.pi)
_C = 1.0 / (2.0 * math.sqrt(2.0 * math.pi))    # sqrt(2) / (4 sqrt(pi))
# whitened coordinates below this carry no probability mass worth keeping
_LOWER_CUT = -14.0


@dataclass(frozen=True)
class SatBounds:
    """Nominal saturation authority: lower ``alpha``, upper ``beta``."""
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.alpha <= self.beta:
            raise DomainError(
                f"alpha = {self.alpha} must not exceed beta = {self.beta}")

    @property
    def threshold(self):
        """Value of ``u2`` below which the output is zero."""
        return max(-self.beta, self.alpha)


@dataclass(frozen=True)
class BivariateStats:
    """Means, standard deviations and correlation of ``(u1, u2)``."""
    mu1: float
    mu2: float
    sigma1: float
    sigma2: float
    rho: float = 0.0

    def __post_init__(self):
        if not self.sigma1 > 0:
            raise DomainError(f"sigma1 must be positive, got {self.sigma1}")
        if not self.sigma2 >= 0:
            raise DomainError(f"sigma2 must be nonnegative, got {self.sigma2}")
        if not abs(self.rho) <= RHO_MAX:
            raise DomainError(f"|rho| must not exceed {RHO_MAX}, got {self.rho}")
        if self.sigma2 == 0 and self.rho != 0:
            raise DomainError("rho must be 0 when sigma2 = 0")

    @property
    def covariance(self):
        c = self.rho * self.sigma1 * self.sigma2
        return np.array([[self.sigma1 ** 2, c], [c, self.sigma2 ** 2]])


class GainMethod(enum.Enum):
    RAW_QUADRATURE = 'raw'
    REDUCED_QUADRATURE = 'reduced'
    SERIES = 'series'
    UNIVARIATE = 'univariate'


@dataclass(frozen=True)
class QuasilinearGains:
    """Gains ``n1``, ``n2`` and expectation ``m`` (= E[sat]) of the actuator.

    ``diagnostics`` holds method-specific metadata (series convergence, ...).
    """
    n1: float
    n2: float
    m: float
    method: GainMethod
    diagnostics: dict = field(default=None, compare=False, repr=False)

    def injected_bias(self, mu1, mu2):
        """Additive term of the linearised actuator, ``M - N1 mu1 - N2 mu2``."""
        return self.m - self.n1 * mu1 - self.n2 * mu2

    def as_dict(self):
        return {'N1': self.n1, 'N2': self.n2, 'M': self.m,
                'method': self.method.value}


def sat_eval(u1, u2, bounds):
    """Evaluate the bivariate saturation (vectorised)."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    clipped = np.minimum(np.maximum(u1, bounds.alpha - u2), bounds.beta + u2)
    out = np.where(u2 >= bounds.threshold, clipped, 0.0)
    return out[()] if out.ndim == 0 else out


def sat_gradient(u1, u2, bounds):
    """Piecewise gradient ``(d/du1, d/du2)`` of the bivariate saturation.

    On the kink lines the interior value of the linear region is used; the
    jump across ``u2 = max(-beta, alpha)`` contributes no gradient.
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    active = u2 >= bounds.threshold
    upper = u1 > bounds.beta + u2
    lower = u1 < bounds.alpha - u2
    g1 = np.where(active & ~upper & ~lower, 1.0, 0.0)
    g2 = np.where(active & upper, 1.0, np.where(active & lower, -1.0, 0.0))
    return g1, g2


def not_saturated(u1, u2, bounds):
    """Indicator of ``u2 >= threshold`` and ``alpha - u2 < u1 < beta + u2``."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    return ((u2 >= bounds.threshold) & (u1 > bounds.alpha - u2)
            & (u1 < bounds.beta + u2))


def _check_nondegenerate(stats):
    if stats.sigma2 == 0:
        raise DomainError("the whitening transform needs sigma2 > 0")


def transform_limits(stats, bounds, u2prime):
    """Integration limits in whitened coordinates.

    With ``u2' = (u2 - mu2) / sigma2`` and ``u1'`` the conditional
    standardisation of ``u1`` given ``u2``, the linear region is
    ``u1min < u1' < u1max`` and the active region is ``u2' >= u2min``.

    Returns
    -------
    u1min, u1max, u2min : float or ndarray

    """
    _check_nondegenerate(stats)
    s1, s2, rho = stats.sigma1, stats.sigma2, stats.rho
    scale = s1 * math.sqrt(1.0 - rho * rho)
    u2prime = np.asarray(u2prime, dtype=float)
    u1min = (bounds.alpha - (stats.mu1 + stats.mu2)
             - u2prime * (rho * s1 + s2)) / scale
    u1max = (bounds.beta - (stats.mu1 - stats.mu2)
             + u2prime * (s2 - rho * s1)) / scale
    u2min = (bounds.threshold - stats.mu2) / s2
    return u1min, u1max, u2min


def gamma_pair(stats, bounds, u2prime):
    """erf arguments ``(-u1min / sqrt 2, u1max / sqrt 2)`` of the inner integral."""
    u1min, u1max, _ = transform_limits(stats, bounds, u2prime)
    return -u1min / _SQRT2, u1max / _SQRT2


def _reduced_integrand(stats, bounds):
    s1, s2, rho = stats.sigma1, stats.sigma2, stats.rho
    mu1, mu2 = stats.mu1, stats.mu2
    alpha, beta = bounds.alpha, bounds.beta
    cond_sd = s1 * math.sqrt(1.0 - rho * rho)

    def f(u):
        g1, g2 = gamma_pair(stats, bounds, u)
        w = np.exp(-0.5 * u * u)
        e1, e2 = special.erf(g1), special.erf(g2)
        n1 = _C * w * (e1 + e2)
        n2 = _C * w * (e1 - e2)
        m = (-_C * w * special.erfc(g1) * (mu2 - alpha + s2 * u)
             + cond_sd / (2.0 * math.pi) * w
             * (np.exp(-g1 * g1) - np.exp(-g2 * g2))
             + _C * (mu1 + rho * s1 * u) * w * (e1 + e2)
             + _C * w * special.erfc(g2) * (beta + mu2 + s2 * u))
        return np.stack([n1, n2, m])

    return f


def _degenerate_gains(stats, bounds, method):
    """Gains when ``u2`` is the constant ``mu2``."""
    if stats.mu2 < bounds.threshold:
        return QuasilinearGains(0.0, 0.0, 0.0, GainMethod.UNIVARIATE,
                                {'requested': method.value})
    lo = bounds.alpha - stats.mu2
    hi = bounds.beta + stats.mu2
    n1, m = univariate_sl_saturation(stats.mu1, stats.sigma1, lo, hi)
    n2 = (float(std_normal_cdf((stats.mu1 - hi) / stats.sigma1))
          - float(std_normal_cdf((lo - stats.mu1) / stats.sigma1)))
    return QuasilinearGains(n1, n2, m, GainMethod.UNIVARIATE,
                            {'requested': method.value})


def gains_reduced_quadrature(stats, bounds, abs_tol=DEFAULT_ABS_TOL):
    """Gains by adaptive 1-D quadrature over the whitened ``u2'``.

    The semi-infinite range ``[u2min, inf)`` is mapped onto ``[0, 1)``.
    ``sigma2 = 0`` falls back to the univariate saturation with bounds
    ``[alpha - mu2, beta + mu2]``.
    """
    if stats.sigma2 == 0:
        return _degenerate_gains(stats, bounds, GainMethod.REDUCED_QUADRATURE)
    u2min = (bounds.threshold - stats.mu2) / stats.sigma2
    lower = max(u2min, _LOWER_CUT)
    values, err = integrate_semi_infinite(
        _reduced_integrand(stats, bounds), lower, abs_tol=abs_tol)
    n1, n2, m = (float(v) for v in values)
    return QuasilinearGains(n1, n2, m, GainMethod.REDUCED_QUADRATURE,
                            {'error_estimate': err})


def gains_raw_quadrature(stats, bounds, abs_tol=DEFAULT_ABS_TOL):
    """Gains by nested adaptive quadrature of the joint Gaussian density.

    Slow; kept as an independent reference for the other two paths.
    """
    if stats.sigma2 == 0:
        return _degenerate_gains(stats, bounds, GainMethod.RAW_QUADRATURE)
    mu1, mu2, s1, s2, rho = (stats.mu1, stats.mu2, stats.sigma1,
                             stats.sigma2, stats.rho)
    alpha, beta = bounds.alpha, bounds.beta
    one_m = 1.0 - rho * rho
    norm = 1.0 / (2.0 * math.pi * s1 * s2 * math.sqrt(one_m))
    reach = 12.0

    def pdf(u1, u2):
        z1 = (u1 - mu1) / s1
        z2 = (u2 - mu2) / s2
        return norm * math.exp(-(z1 * z1 + z2 * z2 - 2 * rho * z1 * z2)
                               / (2.0 * one_m))

    def cond_window(u2):
        c = mu1 + rho * s1 * (u2 - mu2) / s2
        w = reach * s1 * math.sqrt(one_m)
        return c - w, c + w

    opts = {'epsabs': abs_tol * 1e-2, 'epsrel': 1e-12, 'limit': 200}

    def inner(weight, lo, hi, u2):
        wlo, whi = cond_window(u2)
        lo, hi = max(lo, wlo), min(hi, whi)
        if lo >= hi:
            return 0.0
        return sp_integrate.quad(lambda u1: weight(u1, u2) * pdf(u1, u2),
                                 lo, hi, **opts)[0]

    def outer(weight_pieces):
        def g(u2):
            return sum(inner(w, lo(u2), hi(u2), u2)
                       for w, lo, hi in weight_pieces)
        a = max(bounds.threshold, mu2 - reach * s2)
        b = mu2 + reach * s2
        if a >= b:
            return 0.0
        pts = [p for p in (mu2, bounds.threshold) if a < p < b]
        return sp_integrate.quad(g, a, b, points=pts or None, **opts)[0]

    inf = math.inf
    one = lambda u1, u2: 1.0                        # noqa: E731
    minus_one = lambda u1, u2: -1.0                 # noqa: E731
    n1 = outer([(one, lambda u2: alpha - u2, lambda u2: beta + u2)])
    n2 = outer([(minus_one, lambda u2: -inf, lambda u2: alpha - u2),
                (one, lambda u2: beta + u2, lambda u2: inf)])
    m = outer([(lambda u1, u2: alpha - u2, lambda u2: -inf,
                lambda u2: alpha - u2),
               (lambda u1, u2: u1, lambda u2: alpha - u2,
                lambda u2: beta + u2),
               (lambda u1, u2: beta + u2, lambda u2: beta + u2,
                lambda u2: inf)])
    return QuasilinearGains(n1, n2, m, GainMethod.RAW_QUADRATURE)


def series_coefficients(stats, bounds):
    """Lower limit ``p`` and the slope/offset pairs ``(K1, K2), (K3, K4)``."""
    _check_nondegenerate(stats)
    s1, s2, rho = stats.sigma1, stats.sigma2, stats.rho
    root = math.sqrt(1.0 - rho * rho)
    k1 = (s2 + rho * s1) / (s1 * root)
    k2 = (stats.mu1 - bounds.alpha + stats.mu2) / (s1 * _SQRT2 * root)
    k3 = (s2 - rho * s1) / (s1 * root)
    k4 = (bounds.beta - stats.mu1 + stats.mu2) / (s1 * _SQRT2 * root)
    p = (bounds.threshold - stats.mu2) / s2 / _SQRT2
    return p, (k1, k2), (k3, k4)


def gains_series(stats, bounds, tol_percent=DEFAULT_TOL_PERCENT,
                 max_terms=DEFAULT_MAX_TERMS, override=False):
    """Gains from the closed-form expressions in L, R and S.

    Requires ``0 < sigma2 < sigma1`` and ``rho`` inside `rho_admissible`
    unless ``override`` is set; with ``override`` the series is evaluated
    regardless and its convergence flag is reported in ``diagnostics``.
    """
    if not override:
        interval = rho_admissible(stats.sigma1, stats.sigma2)
        if not interval.contains(stats.rho):
            raise DomainError(
                f"rho = {stats.rho} outside the series convergence interval "
                f"({interval.lower:.6g}, {interval.upper:.6g}) for "
                f"sigma1 = {stats.sigma1}, sigma2 = {stats.sigma2}")
    p, (k1, k2), (k3, k4) = series_coefficients(stats, bounds)
    first = integral_L(p, k1, k2, tol_percent, max_terms, override)
    second = integral_L(p, k3, k4, tol_percent, max_terms, override)
    l1, l3 = first.value, second.value

    s1, s2, rho = stats.sigma1, stats.sigma2, stats.rho
    mu1, mu2 = stats.mu1, stats.mu2
    n1 = (l1 + l3) / (2.0 * _SQRT_PI)
    n2 = (l1 - l3) / (2.0 * _SQRT_PI)
    m = (s1 * math.sqrt(1.0 - rho * rho) / (_SQRT2 * math.pi)
         * (integral_R(p, k1, k2) - integral_R(p, k3, k4))
         + (mu1 + mu2 - bounds.alpha) / (2.0 * _SQRT_PI) * l1
         + (mu1 - mu2 - bounds.beta) / (2.0 * _SQRT_PI) * l3
         + (rho * s1 + s2) / math.sqrt(2.0 * math.pi) * integral_S(p, k1, k2)
         + (rho * s1 - s2) / math.sqrt(2.0 * math.pi) * integral_S(p, k3, k4)
         + (bounds.alpha + bounds.beta) / 4.0 * math.erfc(p))
    diag = {'series': (first, second),
            'terms_used': max(first.terms_used, second.terms_used),
            'converged': first.converged and second.converged,
            'slopes': (k1, k3)}
    return QuasilinearGains(n1, n2, m, GainMethod.SERIES, diag)


def prob_not_saturated(stats, bounds, abs_tol=DEFAULT_ABS_TOL):
    """Probability that the primary input is inside the linear region (= N1)."""
    return gains_reduced_quadrature(stats, bounds, abs_tol).n1


def compute_gains(stats, bounds, method='reduced', **options):
    """Dispatch to one of the gain paths by name."""
    method = GainMethod(method) if isinstance(method, str) else method
    if method is GainMethod.REDUCED_QUADRATURE:
        return gains_reduced_quadrature(stats, bounds, **options)
    if method is GainMethod.RAW_QUADRATURE:
        return gains_raw_quadrature(stats, bounds, **options)
    if method is GainMethod.SERIES:
        if stats.sigma2 == 0:
            return _degenerate_gains(stats, bounds, GainMethod.SERIES)
        return gains_series(stats, bounds, **options)
    raise DomainError(f"unsupported gain method {method}")
