"""Scalar special functions and the erf-weighted Gaussian integrals.

``integral_L``, ``integral_R`` and ``integral_S`` are the semi-infinite
integrals out of which the closed-form quasilinear gains of the bivariate
saturation are assembled::

    L(p, a, b) = int_p^inf exp(-x^2) erf(a x + b) dx
    R(p, a, b) = int_p^inf exp(-x^2) exp(-(a x + b)^2) dx
    S(p, a, b) = int_p^inf x exp(-x^2) erf(a x + b) dx

R and S have closed forms.  L is a closed-form part plus a series in powers
of ``a`` that converges for ``|a| < 1``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, NonConvergence

__all__ = ['SeriesResult', 'RhoInterval', 'erf', 'std_normal_cdf',
           'incomplete_gamma_P', 'hermite', 'series_term_L', 'integral_L',
           'integral_R', 'integral_S', 'rho_admissible']

_SQRT_PI = math.sqrt(math.pi)

DEFAULT_TOL_PERCENT = 0.01
DEFAULT_MAX_TERMS = 200


@dataclass(frozen=True)
class SeriesResult:
    """Outcome of a truncated series evaluation.

    ``last_relative_change`` is the size of the last accepted term relative
    to the running total, in percent.
    """
    value: float
    terms_used: int
    converged: bool
    last_relative_change: float


@dataclass(frozen=True)
class RhoInterval:
    """Correlations for which the series for L converges (open interval)."""
    lower: float
    upper: float
    valid: bool

    def contains(self, rho):
        return self.valid and self.lower < rho < self.upper


def erf(x):
    """Error function (vectorised)."""
    return special.erf(x)


def std_normal_cdf(x):
    """Standard normal CDF, ``(1 + erf(x / sqrt(2))) / 2``."""
    return special.ndtr(x)


def _gamma_series(s, x):
    # P(s, x) = x^s e^-x / Gamma(s+1) * sum_k x^k / ((s+1)...(s+k))
    term = 1.0 / s
    total = term
    for k in range(1, 1000):
        term *= x / (s + k)
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + s * math.log(x) - math.lgamma(s))


def _gamma_continued_fraction(s, x):
    # Q(s, x) by the modified Lentz method
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + s * math.log(x) - math.lgamma(s)) * h


def incomplete_gamma_P(s, x):
    """Regularised lower incomplete gamma function P(s, x).

    Uses the power series for ``x < s + 1`` and the continued fraction for
    the complement otherwise, so non-integer orders are supported.
    """
    if not s > 0:
        raise DomainError(f"incomplete gamma order must be positive, got {s}")
    if x < 0:
        raise DomainError(f"incomplete gamma argument must be >= 0, got {x}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < s + 1.0:
        return min(_gamma_series(s, x), 1.0)
    return max(1.0 - _gamma_continued_fraction(s, x), 0.0)


def hermite(j, x):
    """Physicists' Hermite polynomial H_j(x), by the three-term recurrence."""
    if j < 0:
        raise DomainError("Hermite degree must be nonnegative")
    h_prev, h = 1.0, 2.0 * x
    if j == 0:
        return h_prev
    for k in range(1, j):
        h_prev, h = h, 2.0 * x * h - 2.0 * k * h_prev
    return h


def _scaled_hermite_terms(a, b, count):
    """Yield ``T_j = (a/2)^(j+1) / Gamma((j+3)/2) * H_j(b)`` for j < count.

    Computed by a recurrence on T_j directly; the unscaled Hermite values
    overflow long before the products do.
    """
    def ratio(j):
        # T_j / H_j divided by T_{j-1} / H_{j-1}
        return 0.5 * a * math.exp(math.lgamma((j + 2) / 2.0)
                                  - math.lgamma((j + 3) / 2.0))

    t_prev = 0.0
    t = 0.5 * a / math.gamma(1.5)
    for j in range(count):
        yield t
        nxt = ratio(j + 1) * (2.0 * b * t - 2.0 * j * ratio(j) * t_prev)
        t_prev, t = t, nxt


def _series_terms(p, a, b):
    """Generate the n-th series term of L for n = 0, 1, 2, ..."""
    p2 = p * p
    sgn = float(np.sign(p))
    weight = math.exp(-b * b)
    gen = _scaled_hermite_terms(a, b, 1 << 30)
    n = 0
    while True:
        even = next(gen)
        odd = next(gen)
        term = even * (1.0 - incomplete_gamma_P(n + 1.0, p2))
        if sgn != 0.0 and odd != 0.0:
            term += sgn * odd * incomplete_gamma_P(n + 1.5, p2)
        yield weight * term
        n += 1


def series_term_L(n, p, a, b):
    """The n-th term of the series part of L(p, a, b)."""
    for k, term in enumerate(_series_terms(p, a, b)):
        if k == n:
            return term


def _constant_part_L(p, a, b):
    return 0.5 * _SQRT_PI * (math.erf(b / math.sqrt(1.0 + a * a))
                             - math.erf(p) * math.erf(b))


def integral_L(p, a, b, tol_percent=DEFAULT_TOL_PERCENT,
               max_terms=DEFAULT_MAX_TERMS, override=False, patience=3):
    """Evaluate ``L(p, a, b) = int_p^inf exp(-x^2) erf(a x + b) dx``.

    The closed-form part is summed with series terms until ``patience``
    consecutive terms each change the running total by no more than
    ``tol_percent`` percent.  A single small term is not enough because
    the Hermite factor can pass close to zero well before the tail is
    negligible.  The term for n = 0 is always included.

    Parameters
    ----------
    p, a, b : float
        Lower limit, slope and offset of the erf argument.
    tol_percent : float
        Stopping tolerance on the relative change, in percent.
    max_terms : int
        Maximum number of series terms.
    override : bool
        Evaluate even when ``|a| >= 1``, where the series is not guaranteed
        to converge.  Failure to meet the tolerance is then reported through
        ``converged=False`` instead of an exception.
    patience : int
        Number of consecutive terms that must meet the tolerance.  Use 1
        for the plain single-term rule.

    Returns
    -------
    SeriesResult

    Raises
    ------
    DomainError
        If ``|a| >= 1`` and ``override`` is not set.
    NonConvergence
        If ``max_terms`` is reached first (without ``override``).

    """
    if tol_percent <= 0 or max_terms < 1 or patience < 1:
        raise DomainError("tol_percent, max_terms and patience must be "
                          "positive")
    if abs(a) >= 1.0 and not override:
        raise DomainError(f"series for L needs |a| < 1, got a = {a}")

    const = _constant_part_L(p, a, b)
    terms = _series_terms(p, a, b)
    partial = next(terms)
    change = _percent(partial, const)
    quiet = int(change <= tol_percent)
    n = 0
    while quiet < patience and n + 1 < max_terms:
        n += 1
        tn = next(terms)
        change = _percent(tn, partial + const)
        partial += tn
        quiet = quiet + 1 if change <= tol_percent else 0
        if not math.isfinite(partial):
            break
    converged = quiet >= min(patience, n + 1) and math.isfinite(partial)
    if not converged and not override:
        raise NonConvergence(
            f"L({p}, {a}, {b}): relative change {change:.3g}% after "
            f"{n + 1} terms")
    return SeriesResult(partial + const, n + 1, converged, change)


def _percent(num, den):
    if num == 0.0:
        return 0.0
    if den == 0.0:
        return math.inf
    return abs(num / den) * 100.0


def integral_R(p, a, b):
    """Closed form of ``int_p^inf exp(-x^2) exp(-(a x + b)^2) dx``."""
    q = a * a + 1.0
    root = math.sqrt(q)
    return (0.5 * _SQRT_PI / root * math.exp(-b * b / q)
            * math.erfc((p * q + a * b) / root))


def integral_S(p, a, b):
    """Closed form of ``int_p^inf x exp(-x^2) erf(a x + b) dx``."""
    q = a * a + 1.0
    root = math.sqrt(q)
    # boundary term at p, plus (a / sqrt(pi)) * R(p, a, b)
    head = 0.5 * math.erf(a * p + b) * math.exp(-p * p)
    tail = (0.5 * a / root * math.exp(-b * b / q)
            * math.erfc((p * q + a * b) / root))
    return head + tail


def rho_admissible(sigma1, sigma2):
    """Correlation interval on which both series slopes satisfy |K| < 1.

    With ``r = sigma2 / sigma1`` the interval is
    ``|rho| < (sqrt(2 - r^2) - r) / 2``, and it is only meaningful for
    ``0 < sigma2 < sigma1``.
    """
    if sigma1 <= 0 or sigma2 < 0:
        raise DomainError("standard deviations must be positive")
    r = sigma2 / sigma1
    radicand = 2.0 - r * r
    upper = 0.5 * (math.sqrt(radicand) - r) if radicand >= 0 else 0.0
    valid = 0.0 < sigma2 < sigma1 and upper > 0.0
    return RhoInterval(-upper, upper, valid)
