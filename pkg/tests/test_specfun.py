import math

import mpmath as mp
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as sci

from qlc.errors import DomainError, NonConvergence
from qlc.specfun import (erf, hermite, incomplete_gamma_P, integral_L,
                         integral_R, integral_S, rho_admissible,
                         series_term_L, std_normal_cdf)

mp.mp.dps = 30


def _quad(f, p):
    return sci.quad(f, p, math.inf, epsabs=1e-14, epsrel=1e-13, limit=400)[0]


def _L(p, a, b):
    return float(mp.quad(lambda x: mp.exp(-x * x) * mp.erf(a * x + b),
                         [p, p + 5, mp.inf]))


def _R(p, a, b):
    return _quad(lambda x: math.exp(-x * x - (a * x + b) ** 2), p)


def _S(p, a, b):
    return _quad(lambda x: x * math.exp(-x * x) * math.erf(a * x + b), p)


# erf / normal cdf ------------------------------------------------------------

def test_erf_basic():
    assert erf(0.0) == 0.0
    assert erf(40.0) == 1.0
    ref = 2 / math.sqrt(math.pi) * sci.quad(lambda t: math.exp(-t * t), 0, 1,
                                            epsabs=1e-15)[0]
    assert erf(1.0) == pytest.approx(ref, abs=1e-15)


@given(st.floats(-8, 8))
def test_erf_odd(x):
    assert erf(-x) == -erf(x)


def test_normal_cdf():
    assert std_normal_cdf(0.0) == 0.5
    ref = 0.5 + sci.quad(lambda t: math.exp(-t * t / 2), 0, 1,
                         epsabs=1e-15)[0] / math.sqrt(2 * math.pi)
    assert std_normal_cdf(1.0) == pytest.approx(ref, abs=1e-15)


@given(st.floats(-8, 8))
def test_normal_cdf_symmetry(x):
    assert std_normal_cdf(-x) == pytest.approx(1 - std_normal_cdf(x), abs=1e-15)


# incomplete gamma ------------------------------------------------------------

@pytest.mark.parametrize('x', [0.1, 1.0, 5.0, 30.0])
def test_gamma_order_one(x):
    assert incomplete_gamma_P(1, x) == pytest.approx(1 - math.exp(-x), abs=1e-14)


def test_gamma_zero_argument():
    assert incomplete_gamma_P(2.5, 0.0) == 0.0


def test_gamma_half_integer_quadrature():
    s, x = 1.5, 2.0
    ref = sci.quad(lambda t: t ** (s - 1) * math.exp(-t), 0, x,
                   epsabs=1e-15)[0] / math.gamma(s)
    assert incomplete_gamma_P(s, x) == pytest.approx(ref, abs=1e-13)


@settings(max_examples=60)
@given(st.floats(0.5, 80.0), st.floats(0.0, 150.0))
def test_gamma_against_mpmath(s, x):
    ref = float(mp.gammainc(s, 0, x, regularized=True))
    assert incomplete_gamma_P(s, x) == pytest.approx(ref, abs=1e-12)


def test_gamma_domain():
    with pytest.raises(DomainError):
        incomplete_gamma_P(0.0, 1.0)
    with pytest.raises(DomainError):
        incomplete_gamma_P(1.0, -1.0)


# Hermite -------------------------------------------------------------------

def test_hermite_values():
    assert hermite(0, 1.3) == 1.0
    assert hermite(1, 1.3) == 2.6
    assert hermite(2, 3.0) == 34.0


@given(st.integers(0, 25), st.floats(-3, 3))
def test_hermite_against_mpmath(j, x):
    ref = float(mp.hermite(j, x))
    assert hermite(j, x) == pytest.approx(ref, rel=1e-11, abs=1e-9)


# L, R, S -------------------------------------------------------------------

def test_L_a_zero_has_no_series_part():
    res = integral_L(0.0, 0.0, 1.0)
    assert res.value == pytest.approx(math.erf(1) * math.sqrt(math.pi) / 2, abs=1e-15)
    assert series_term_L(0, 0.0, 0.0, 1.0) == 0.0
    assert series_term_L(3, 0.0, 0.0, 1.0) == 0.0


def test_L_p_zero_b_zero():
    a = 0.6
    assert integral_L(0.0, a, 0.0, tol_percent=1e-12).value == pytest.approx(
        _L(0.0, a, 0.0), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-0.9, 0.9), st.floats(-3, 3))
def test_L_against_mpmath(p, a, b):
    res = integral_L(p, a, b, tol_percent=1e-11, max_terms=600)
    assert res.converged
    assert res.value == pytest.approx(_L(p, a, b), abs=1e-9)


def test_L_single_small_term_does_not_stop_the_sum():
    # the first terms pass near a Hermite root; one small term is not
    # evidence that the tail is negligible
    p, a, b = -2.47445121387729, 0.7033970978184798, 2.054540527631025
    exact = _L(p, a, b)
    eager = integral_L(p, a, b, tol_percent=1e-4, max_terms=400, patience=1)
    patient = integral_L(p, a, b, tol_percent=1e-4, max_terms=400)
    assert abs(eager.value - exact) > 1e-5
    assert patient.terms_used > eager.terms_used
    assert patient.value == pytest.approx(exact, abs=1e-6)


def test_L_outside_region_requires_override():
    with pytest.raises(DomainError):
        integral_L(0.3, 1.2, 0.1)
    res = integral_L(0.3, 1.2, 0.1, max_terms=5, override=True)
    assert res.terms_used <= 5


def test_L_term_budget():
    with pytest.raises(NonConvergence):
        integral_L(-2.0, 0.95, 0.4, tol_percent=1e-14, max_terms=3)


def test_R_reductions():
    p, b = 0.4, 0.7
    ref = math.exp(-b * b) * math.sqrt(math.pi) / 2 * (1 - math.erf(p))
    assert integral_R(p, 0.0, b) == pytest.approx(ref, abs=1e-15)
    a = 1.3
    assert integral_R(-40.0, a, 0.0) == pytest.approx(
        math.sqrt(math.pi / (a * a + 1)), abs=1e-14)


@pytest.mark.parametrize('p,a,b', [(0.5, 0.8, -0.3), (-1.0, 2.0, 0.4),
                                   (1.5, -0.4, 1.1)])
def test_R_quadrature(p, a, b):
    assert integral_R(p, a, b) == pytest.approx(_R(p, a, b), abs=1e-13)


def test_S_reductions():
    p, b = 0.2, -0.6
    assert integral_S(p, 0.0, b) == pytest.approx(
        math.erf(b) * math.exp(-p * p) / 2, abs=1e-15)
    # erf argument vanishes at p: only the tail survives
    p, a = 0.7, 0.5
    b = -a * p
    q = a * a + 1
    tail = a / (2 * math.sqrt(q)) * math.exp(-b * b / q) * math.erfc(
        (p * q + a * b) / math.sqrt(q))
    assert integral_S(p, a, b) == pytest.approx(tail, abs=1e-15)


@pytest.mark.parametrize('p,a,b', [(0.3, 0.5, 0.2), (-2.0, -1.4, 0.3),
                                   (1.0, 3.0, -2.0)])
def test_S_quadrature(p, a, b):
    assert integral_S(p, a, b) == pytest.approx(_S(p, a, b), abs=1e-13)


# admissible region -----------------------------------------------------------

def test_rho_admissible_boundaries():
    assert rho_admissible(1.0, 1.0).upper == 0.0
    assert not rho_admissible(1.0, 1.0).valid
    assert rho_admissible(1.0, 1e-12).upper == pytest.approx(math.sqrt(2) / 2)


def test_rho_admissible_appendix_example():
    iv = rho_admissible(0.8, 0.7)
    assert iv.upper == pytest.approx(0.118, abs=5e-4)
    assert not iv.contains(0.25)


@given(st.floats(0.05, 0.95))
def test_rho_admissible_boundary_makes_slope_one(r):
    # at the boundary the larger of |K1|, |K3| equals 1
    rho = rho_admissible(1.0, r).upper
    c = math.sqrt(1 - rho * rho)
    k = max(abs(r + rho) / c, abs(r - rho) / c)
    assert k == pytest.approx(1.0, abs=1e-12)
