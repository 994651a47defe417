import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as sci, linalg as sla, signal as sig

from qlc.bivariate import SatBounds
from qlc.errors import IllPosed, NonStrictlyProper, NotHurwitz
from qlc.lti import (LoopSpec, SignalSpec, StateSpace, butterworth_filter,
                     close_loop, closed_loop_matrices, dc_gain, h2_norm,
                     inverse_dc_gain, is_hurwitz, lyap_solve, open_loop,
                     phase_margin, stability_and_margin)

from conftest import example_spec


def _random_stable(n, rng):
    A = rng.standard_normal((n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.1, 2.0)) * np.eye(n)
    return A


def _h2_freq(sys):
    """Oracle: (1/pi) int_0^inf |G(jw)|^2 dw."""
    f = lambda w: abs(sys.evalfr(1j * w)) ** 2          # noqa: E731
    return math.sqrt(sci.quad(f, 0, math.inf, limit=500, epsabs=1e-13,
                              epsrel=1e-11)[0] / math.pi)


# state space -----------------------------------------------------------------

def test_from_tf_round_trip():
    s = StateSpace.from_tf([2.0, 1.0], [1.0, 3.0, 2.0])
    assert s.is_siso and s.is_strictly_proper and s.n_states == 2
    assert s.evalfr(1j) == pytest.approx((2j + 1) / (-1 + 3j + 2))
    num, den = s.to_tf()
    np.testing.assert_allclose(np.polyval(num, 0.7) / np.polyval(den, 0.7),
                               (2 * 0.7 + 1) / (0.49 + 2.1 + 2))


def test_gain_block():
    k = StateSpace.gain(3.0)
    assert k.n_states == 0 and not k.is_strictly_proper
    assert dc_gain(k) == 3.0


# filters ---------------------------------------------------------------------

@pytest.mark.parametrize('w', [1.0, 48.0, 8984.0])
def test_filter_unit_h2(w):
    f = butterworth_filter(w)
    assert h2_norm(f) == pytest.approx(1.0, abs=1e-12)
    assert _h2_freq(f) == pytest.approx(1.0, abs=1e-7)


def test_filter_dc_gain_and_poles():
    assert dc_gain(butterworth_filter(3.0)) == pytest.approx(1.0, abs=1e-12)
    poles = np.sort_complex(butterworth_filter(48.0).poles())
    ref = np.sort_complex(sig.butter(3, 48.0, analog=True, output='zpk')[1])
    np.testing.assert_allclose(poles, ref, rtol=1e-12)


@pytest.mark.parametrize('order', [1, 2, 4])
def test_other_orders_unit_norm(order):
    assert _h2_freq(butterworth_filter(10.0, order)) == pytest.approx(1.0, abs=1e-7)


def test_h2_homogeneous():
    f = butterworth_filter(5.0)
    g = StateSpace(f.A, f.B, 2.5 * f.C, f.D)
    assert h2_norm(g) == pytest.approx(2.5, rel=1e-12)
    assert h2_norm(StateSpace.from_tf([1.0], [1.0, 1.0])) == pytest.approx(
        1 / math.sqrt(2), rel=1e-14)
    with pytest.raises(NonStrictlyProper):
        h2_norm(StateSpace.from_tf([1.0, 0.0], [1.0, 1.0]))


# Lyapunov --------------------------------------------------------------------

def test_lyap_scalar_and_diagonal():
    assert lyap_solve([[-1.0]], [[1.0]])[0, 0] == pytest.approx(0.5)
    S = lyap_solve(np.diag([-1.0, -2.0]), np.eye(2))
    np.testing.assert_allclose(S, np.diag([0.5, 0.25]), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2 ** 31))
def test_lyap_matches_bartels_stewart(n, seed):
    rng = np.random.default_rng(seed)
    A = _random_stable(n, rng)
    B = rng.standard_normal((n, 2))
    Q = B @ B.T
    S = lyap_solve(A, Q)
    ref = sla.solve_continuous_lyapunov(A, -Q)
    scale = np.abs(ref).max()
    np.testing.assert_allclose(S, ref, atol=1e-9 * scale)
    assert np.abs(A @ S + S @ A.T + Q).max() <= 1e-8 * max(1.0, np.abs(Q).max())
    np.testing.assert_array_equal(S, S.T)


def test_lyap_large_uses_fallback():
    rng = np.random.default_rng(0)
    A = _random_stable(40, rng)
    Q = np.eye(40)
    S = lyap_solve(A, Q)
    assert np.abs(A @ S + S @ A.T + Q).max() < 1e-8


def test_lyap_unstable():
    with pytest.raises(NotHurwitz):
        lyap_solve([[0.1]], [[1.0]])


# DC gains and margins ----------------------------------------------------------

def test_dc_gains():
    assert dc_gain(StateSpace.from_tf([10.0], [1.0, 10.0, 0.0])) == math.inf
    assert dc_gain(StateSpace.from_tf([-10.0], [1.0, 10.0, 0.0])) == -math.inf
    assert dc_gain(StateSpace.from_tf([1.0], [0.3, 1.0])) == pytest.approx(1.0)
    assert inverse_dc_gain(StateSpace.from_tf([10.0], [1.0, 10.0, 0.0])) == 0.0


def _sweep_margin(num, den, n=100_000):
    w = np.logspace(-4, 5, n)
    L = np.polyval(num, 1j * w) / np.polyval(den, 1j * w)
    i = np.argmin(np.abs(np.log(np.abs(L))))
    return math.degrees(np.angle(L[i])) + 180.0


def test_margin_integrator():
    assert phase_margin(StateSpace.from_tf([1.0], [1.0, 0.0]),
                        StateSpace.gain(1.0)) == pytest.approx(90.0, abs=1e-9)


@pytest.mark.parametrize('k', [0.24, 1.0, 100.0])
def test_margin_against_sweep(k):
    P = StateSpace.from_tf([10.0], [1.0, 10.0, 0.0])
    pm = phase_margin(P, StateSpace.gain(k))
    assert pm == pytest.approx(_sweep_margin([10.0 * k], [1.0, 10.0, 0.0]), abs=0.01)


def test_margin_none_without_crossing():
    assert phase_margin(StateSpace.from_tf([1.0], [1.0, 1.0]),
                        StateSpace.gain(0.5)) is None


def test_unstable_plant_weak_controller():
    stable, _ = stability_and_margin(StateSpace.from_tf([1.0], [1.0, -1.0]),
                                     StateSpace.gain(0.1))
    assert not stable


# loop assembly ---------------------------------------------------------------

def test_signal_spec_validation():
    with pytest.raises(ValueError):
        SignalSpec(0.0, -1.0, 1.0)


def test_ill_posed_feedthrough():
    with pytest.raises(IllPosed):
        LoopSpec(StateSpace.gain(-1.0), StateSpace.gain(1.0), SatBounds(-1, 1),
                 SignalSpec(), SignalSpec(), SignalSpec())


def test_open_loop_poles_at_zero_gain():
    spec = example_spec(k=0.24)
    A = close_loop(spec, 0.0, 0.0, 0.0).A
    parts = [f.poles() for f in spec.filters] + [spec.plant.poles()]
    ref = np.sort_complex(np.concatenate(parts))
    np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(A)), ref,
                               atol=1e-9 * 48)


def test_closed_loop_against_transfer_function():
    # e from r at n1 = 1, n2 = 0: 1 / (1 + K P), times the reference filter
    k = 0.7
    spec = example_spec(k=k)
    cl = close_loop(spec, 1.0, 0.0, 0.0)
    fr = spec.filters[0]
    blk = cl.blocks['rf']
    for w in (0.3, 4.0, 60.0):
        s = 1j * w
        # transfer from w_r (first noise column) to e
        x = np.linalg.solve(s * np.eye(cl.A.shape[0]) - cl.A, cl.B[:, 0])
        got = cl.rows['e'] @ x
        P = spec.plant.evalfr(s)
        ref = fr.evalfr(s) * spec.ref.sigma / (1 + k * P)
        assert got == pytest.approx(ref, rel=1e-10)
    assert blk.stop - blk.start == fr.n_states


def test_closed_loop_feedthrough_case():
    # static plant and controller: every D term enters the loop gain
    spec = LoopSpec(StateSpace.gain(0.5), StateSpace.gain(2.0), SatBounds(-1, 1),
                    SignalSpec(0, 1, 5.0), SignalSpec(0, 1, 5.0),
                    SignalSpec(0, 1, 5.0))
    n1 = 0.6
    cl = close_loop(spec, n1, 0.0, 0.0)
    # static loop: e = (r - 0.5 d) / (1 + 0.5 * n1 * 2)
    fr, fb, fd = spec.filters
    xr, xd = cl.blocks['rf'], cl.blocks['df']
    np.testing.assert_allclose(cl.rows['e'][xr], fr.C[0] / (1 + n1), rtol=1e-12)
    np.testing.assert_allclose(cl.rows['e'][xd], -0.5 * fd.C[0] / (1 + n1), rtol=1e-12)


def test_example_loop_hurwitz_at_optimum():
    from qlc.loop import fixed_point_solve
    spec = example_spec(k=0.24)
    sol = fixed_point_solve(spec)
    A, B, C1, C2, Ce = closed_loop_matrices(spec, sol.n1, sol.n2)
    assert is_hurwitz(A)
    assert C1.shape == C2.shape == Ce.shape == (A.shape[0],)


def test_open_loop_structure():
    ol = open_loop(example_spec())
    # the actuator output is the free input of the open loop
    assert set(ol.rows) >= {'r', 'd', 'u2', 'e', 'u1', 'y'}
    assert ol.vcoef['u1'] == pytest.approx(0.0)
    assert ol.vcoef['e'] == pytest.approx(0.0)
