import pytest

from qlc.bivariate import SatBounds
from qlc.lti import LoopSpec, SignalSpec, StateSpace


def example_spec(k=100.0, alpha=-2.0, beta=1.0, sigma2=1.0, cutoff=48.0):
    """Integrator plant 10/(s(s+10)) under proportional control."""
    sig = SignalSpec(0.0, 1.0, cutoff)
    return LoopSpec(
        plant=StateSpace.from_tf([10.0], [1.0, 10.0, 0.0]),
        controller=StateSpace.gain(k),
        bounds=SatBounds(alpha, beta),
        ref=sig, dist=sig,
        bound_noise=SignalSpec(0.0, sigma2, cutoff))


def first_order_spec(k=2.0, T=0.5, alpha=-1e6, beta=1e6, sigma2=0.1,
                     mu_r=0.0, mu_d=0.0, cutoff=20.0):
    return LoopSpec(
        plant=StateSpace.from_tf([1.0], [T, 1.0]),
        controller=StateSpace.gain(k),
        bounds=SatBounds(alpha, beta),
        ref=SignalSpec(mu_r, 1.0, cutoff),
        dist=SignalSpec(mu_d, 1.0, cutoff),
        bound_noise=SignalSpec(0.0, sigma2, cutoff))


@pytest.fixture
def example():
    return example_spec


# acceptance reporting ------------------------------------------------------

ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    """Store the outcome of an acceptance criterion for the summary."""
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section('acceptance criteria')
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
