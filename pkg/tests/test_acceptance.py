"""Acceptance suite: one test per criterion, tolerances pinned.

Each test records a pass/fail line that is printed in the terminal summary
and then asserts the same condition.
"""

import math
import time

import numpy as np
import pytest

from scipy import integrate as sci
from scipy.stats import norm

from qlc.bivariate import (BivariateStats, SatBounds, gains_raw_quadrature,
                           gains_reduced_quadrature, gains_series,
                           not_saturated, sat_eval, sat_gradient,
                           series_coefficients)
from qlc.design import DesignProblem, objective, optimize_gain
from qlc.linearize import GaussianVectorSpec, mc_linearize
from qlc.loop import fixed_point_solve
from qlc.lti import (LoopSpec, SignalSpec, StateSpace, butterworth_filter,
                     close_loop, h2_norm, lyap_solve)
from qlc.montecarlo import (StudyConfig, _spec as study_spec, accept_system,
                            monte_carlo_study, sample_system)
from qlc.sim import default_config, simulate_nonlinear, simulate_quasilinear
from qlc.specfun import integral_L, rho_admissible

from conftest import example_spec, first_order_spec, record_criterion

QUAD_ABS = 1e-7
MC_SIGMAS = 4.0
MC_SAMPLES = 1_000_000

pytestmark = pytest.mark.acceptance


def _random_stats(rng):
    s1 = rng.uniform(0.2, 3.0)
    s2 = s1 * rng.uniform(0.01, 0.99)
    stats = BivariateStats(rng.uniform(-3, 3), rng.uniform(-3, 3), s1, s2,
                           rng.uniform(-0.9, 0.9))
    return stats, SatBounds(rng.uniform(-5, 0), rng.uniform(0, 5))


def _grad_stderr(sample_se, ref):
    q = min(abs(ref), 1.0)
    return max(sample_se, math.sqrt(q * (1.0 - q) / MC_SAMPLES))


def _second_moment_of_output(stats, bounds):
    """``E[sat(u1, u2)^2]`` from truncated-normal moments of ``u1 | u2``."""
    s1, s2, rho = stats.sigma1, stats.sigma2, stats.rho
    cs = rho * s1 / s2
    sc = s1 * math.sqrt(1.0 - rho * rho)

    def given(u2):
        m = stats.mu1 + cs * (u2 - stats.mu2)
        lo, hi = bounds.alpha - u2, bounds.beta + u2
        A, B = (lo - m) / sc, (hi - m) / sc
        inside = norm.cdf(B) - norm.cdf(A)
        mid = (m * m * inside + 2 * m * sc * (norm.pdf(A) - norm.pdf(B))
               + sc * sc * (inside + A * norm.pdf(A) - B * norm.pdf(B)))
        return (norm.cdf(A) * lo * lo + mid + norm.sf(B) * hi * hi) \
            * norm.pdf(u2, stats.mu2, s2)

    return sci.quad(given, bounds.threshold, math.inf, epsabs=1e-14,
                    limit=200)[0]


def test_criterion_1_gain_oracle_triangle():
    rng = np.random.default_rng(101)
    t0 = time.time()
    worst_quad, worst_z, bad = 0.0, 0.0, []
    for i in range(50):
        stats, bounds = _random_stats(rng)
        raw = gains_raw_quadrature(stats, bounds, abs_tol=1e-10)
        red = gains_reduced_quadrature(stats, bounds, abs_tol=1e-10)
        spec = GaussianVectorSpec(np.array([stats.mu1, stats.mu2]),
                                  stats.covariance)
        mc = mc_linearize(
            lambda u: sat_eval(u[:, 0], u[:, 1], bounds),
            lambda u: np.stack(sat_gradient(u[:, 0], u[:, 1], bounds), 1),
            spec, samples=MC_SAMPLES, seed=1000 + i)
        dq = max(abs(raw.n1 - red.n1), abs(raw.n2 - red.n2), abs(raw.m - red.m))
        worst_quad = max(worst_quad, dq)
        # for rare events the sample stderr badly underestimates (it is zero
        # when no sample is active), so it is floored by the population
        # stderr: the gradient samples lie in {-1, 0, 1}, and the output
        # variance comes from an independent 1-D quadrature
        pairs = [(mc.gains[0], red.n1, _grad_stderr(mc.stderr_gains[0], red.n1)),
                 (mc.gains[1], red.n2, _grad_stderr(mc.stderr_gains[1], red.n2)),
                 (mc.bias, red.m, max(mc.stderr_bias, math.sqrt(max(
                     _second_moment_of_output(stats, bounds) - red.m ** 2,
                     0.0) / MC_SAMPLES)))]
        for est, ref, se in pairs:
            tol = max(MC_SIGMAS * se, 1e-9)
            worst_z = max(worst_z, abs(est - ref) / tol * MC_SIGMAS)
            if abs(est - ref) > tol:
                bad.append((i, est, ref, se))
        if dq > QUAD_ABS:
            bad.append((i, 'quad', dq))
    ok = not bad
    record_criterion(1, ok, f"50 sets, max |raw-reduced| = {worst_quad:.2e} "
                            f"(<= {QUAD_ABS:g}), max MC z = {worst_z:.2f} "
                            f"(<= {MC_SIGMAS:g}), {time.time() - t0:.0f} s")
    assert ok, bad


def test_criterion_2_series_vs_quadrature():
    # strictly inside: both series slopes at most 0.8 in magnitude and the
    # lower limit moderate (the terms only switch on once n exceeds p^2)
    slope_cap, p_cap, tol_percent, max_terms = 0.8, 3.0, 1e-4, 60
    rng = np.random.default_rng(202)
    t0 = time.time()
    cases = []
    while len(cases) < 20:
        stats, bounds = _random_stats(rng)
        iv = rho_admissible(stats.sigma1, stats.sigma2)
        if iv.upper <= 0:
            continue
        stats = BivariateStats(stats.mu1, stats.mu2, stats.sigma1,
                               stats.sigma2, rng.uniform(iv.lower, iv.upper))
        p, (k1, _), (k3, _) = series_coefficients(stats, bounds)
        if max(abs(k1), abs(k3)) <= slope_cap and abs(p) <= p_cap:
            cases.append((stats, bounds))
    worst_err, worst_terms, shape_ok = 0.0, 0, True
    for stats, bounds in cases:
        ser = gains_series(stats, bounds, tol_percent=tol_percent,
                           max_terms=max_terms)
        red = gains_reduced_quadrature(stats, bounds, abs_tol=1e-12)
        err = max(abs(ser.n1 - red.n1), abs(ser.n2 - red.n2),
                  abs(ser.m - red.m))
        worst_err = max(worst_err, err)
        worst_terms = max(worst_terms, ser.diagnostics['terms_used'])
        # accuracy figure shape: truncation error falls by orders of
        # magnitude as terms are added
        p, (a, b), _ = series_coefficients(stats, bounds)
        final = integral_L(p, a, b, tol_percent=1e-12, max_terms=400).value
        errs = [abs(integral_L(p, a, b, tol_percent=1e-300, max_terms=n,
                               override=True).value - final)
                for n in (1, 10, 30, 60)]
        envelope = np.maximum.accumulate(errs[::-1])[::-1]
        shape_ok &= bool(errs[-1] <= 1e-6 and
                         (errs[0] == 0 or errs[-1] < 1e-2 * errs[0]) and
                         np.all(np.diff(envelope) <= 0))
    tol = max(1e-6, tol_percent / 100.0)
    ok = worst_err <= tol and worst_terms <= max_terms and shape_ok
    record_criterion(2, ok, f"20 sets with |K1|, |K3| <= {slope_cap}, |p| <= "
                            f"{p_cap}, max error "
                            f"{worst_err:.2e} (<= {tol:g}), max terms "
                            f"{worst_terms} (<= {max_terms}), error decay "
                            f"{'ok' if shape_ok else 'broken'}, "
                            f"{time.time() - t0:.0f} s")
    assert ok


def test_criterion_3_large_sigma2_limit():
    bounds = SatBounds(-1.0, 1.0)
    dev = {}
    for s2 in (5.0, 20.0, 50.0):
        g = gains_reduced_quadrature(BivariateStats(0.0, 0.0, 1.0, s2, 0.0),
                                     bounds, abs_tol=1e-12)
        dev[s2] = abs(g.n1 - 0.5)
    ok = dev[50.0] <= 0.02 and dev[5.0] > dev[20.0] > dev[50.0]
    record_criterion(3, ok, "|N1 - 0.5| at sigma2 = 5, 20, 50: " +
                     ", ".join(f"{dev[s]:.4f}" for s in (5.0, 20.0, 50.0)))
    assert ok


def test_criterion_4_saturation_probability():
    rng = np.random.default_rng(404)
    t0 = time.time()
    worst = 0.0
    for _ in range(10):
        stats, bounds = _random_stats(rng)
        n1 = gains_reduced_quadrature(stats, bounds, abs_tol=1e-12).n1
        u = rng.multivariate_normal([stats.mu1, stats.mu2], stats.covariance,
                                    MC_SAMPLES)
        freq = not_saturated(u[:, 0], u[:, 1], bounds).mean()
        tol = 4.0 * math.sqrt(n1 * (1.0 - n1) / MC_SAMPLES)
        worst = max(worst, abs(freq - n1) / max(tol, 1e-300) * 4.0)
    ok = worst <= 4.0
    record_criterion(4, ok, f"10 sets, max |freq - N1| = {worst:.2f} binomial "
                            f"sigmas (<= 4), {time.time() - t0:.0f} s")
    assert ok


def _decomposition_loops():
    return [
        first_order_spec(k=2.0, T=0.5, alpha=-1.5, beta=1.0, sigma2=0.4,
                         mu_r=0.5, mu_d=0.3),
        first_order_spec(k=5.0, T=0.2, alpha=-2.0, beta=0.5, sigma2=1.0,
                         mu_r=-0.4, mu_d=0.2),
        example_spec(k=1.0),
        LoopSpec(StateSpace.from_tf([4.0], [1.0, 1.2, 4.0]),
                 StateSpace.gain(1.5), SatBounds(-1.0, 2.0),
                 SignalSpec(0.3, 1.0, 20.0), SignalSpec(-0.2, 0.5, 20.0),
                 SignalSpec(0.2, 0.8, 20.0)),
        LoopSpec(StateSpace.from_tf([1.0], [1.0, 1.0]),
                 StateSpace.from_tf([2.0, 1.0], [1.0, 0.0]),
                 SatBounds(-3.0, 3.0), SignalSpec(0.5, 1.0, 10.0),
                 SignalSpec(0.1, 1.0, 10.0), SignalSpec(0.5, 1.0, 10.0)),
    ]


def test_criterion_5_lyapunov_and_decomposition():
    rng = np.random.default_rng(505)
    t0 = time.time()
    worst_res = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 13))
        A = rng.standard_normal((n, n))
        A -= (np.linalg.eigvals(A).real.max() + rng.uniform(0.1, 2.0)) * np.eye(n)
        B = rng.standard_normal((n, int(rng.integers(1, n + 1))))
        Q = B @ B.T
        X = lyap_solve(A, Q)
        worst_res = max(worst_res, np.abs(A @ X + X @ A.T + Q).max())

    worst_z = 0.0
    for j, spec in enumerate(_decomposition_loops()):
        sol = fixed_point_solve(spec)
        cl = close_loop(spec, sol.gains.n1, sol.gains.n2, sol.m)
        xbar = cl.mean_state()
        second = cl.covariance() + np.outer(xbar, xbar)
        cfg = default_config(spec, sol.gains.n1, sol.gains.n2, seed=50 + j,
                             max_steps=2_000_000, horizon=2000.0,
                             state_moments=True)
        ql = simulate_quasilinear(spec, sol, cfg, exact=True)
        tol = np.maximum(MC_SIGMAS * ql.stderr_state_second_moment,
                         1e-12 * max(np.abs(second).max(), 1.0))
        worst_z = max(worst_z, float(
            (np.abs(ql.state_second_moment - second) / tol).max() * MC_SIGMAS))
    ok = worst_res <= 1e-8 and worst_z <= MC_SIGMAS
    record_criterion(5, ok, f"max Lyapunov residual {worst_res:.2e} (<= 1e-8); "
                            f"5 loops, max entrywise z = {worst_z:.2f} (<= 4), "
                            f"{time.time() - t0:.0f} s")
    assert ok


def test_criterion_6_unit_h2_filters():
    norms = {w: h2_norm(butterworth_filter(w, 3)) for w in (1.0, 48.0, 8984.0)}
    ok = all(abs(v - 1.0) <= 1e-6 for v in norms.values())
    record_criterion(6, ok, "H2 norms " + ", ".join(
        f"{w:g}: {v:.9f}" for w, v in norms.items()))
    assert ok


def test_criterion_7_design_example():
    t0 = time.time()
    problem = DesignProblem(example_spec(), gamma=1.0)
    cost_100 = objective(problem, 100.0)
    res = optimize_gain(problem)
    sol = res.solution_at_opt
    spec = problem.spec(res.k_opt)
    cfg = default_config(spec, sol.gains.n1, sol.gains.n2, seed=7,
                         max_steps=2_000_000)
    nl = simulate_nonlinear(spec, cfg, start=sol)
    checks = {
        'cost(K=100) ~ 1244.5 +-10%': abs(cost_100 - 1244.5) <= 0.1 * 1244.5,
        'k_opt in [0.19, 0.29]': 0.19 <= res.k_opt <= 0.29,
        'cost(k_opt) ~ 1.2 +-25%': abs(res.cost_opt - 1.2) <= 0.25 * 1.2,
        'NL non-saturation >= 0.99': nl.non_saturation_frequency >= 0.99,
    }
    ok = all(checks.values())
    detail = (f"cost(100) = {cost_100:.1f}, k_opt = {res.k_opt:.4f}, "
              f"cost(k_opt) = {res.cost_opt:.4f}, NL non-saturation "
              f"{nl.non_saturation_frequency:.3f}; failed: "
              + (', '.join(k for k, v in checks.items() if not v) or 'none')
              + f"; {time.time() - t0:.0f} s")
    record_criterion(7, ok, detail)
    assert ok, detail


def test_criterion_8_desk_scale_study():
    t0 = time.time()
    cfg = StudyConfig(n_accepted=100, seed=808)
    report = monte_carlo_study(cfg)
    err0 = np.median(report.metrics(0.0, 'error_metric'))
    med = [float(np.median(report.metrics(s, 'output_metric')))
           for s in (0.0, 2.5, 5.0)]
    frac = report.rejection_fraction
    ok_a = err0 <= 0.15
    ok_b = med[0] <= med[1] <= med[2]
    ok_c = 0.05 <= frac <= 0.40
    ok = ok_a and ok_b and ok_c
    record_criterion(8, ok, f"median error metric at sigma2=0 {err0:.4f} "
                            f"(<= 0.15); median output metric "
                            f"{med[0]:.4f}, {med[1]:.4f}, {med[2]:.4f} "
                            f"(nondecreasing); rejection fraction {frac:.3f} "
                            f"in [0.05, 0.40]; {time.time() - t0:.0f} s")
    assert ok


def test_criterion_9_end_to_end_consistency():
    t0 = time.time()
    cfg = StudyConfig(seed=909)
    rng = np.random.default_rng(909)
    index, done, worst, bad = 0, 0, 0.0, []
    while done < 10:
        params = sample_system(cfg, index)
        index += 1
        if not accept_system(cfg, params)[0]:
            continue
        done += 1
        spec = study_spec(cfg, params, float(rng.uniform(0.0, 5.0)))
        sol = fixed_point_solve(spec)
        sc = default_config(spec, sol.gains.n1, sol.gains.n2, seed=done,
                            max_steps=4_000_000)
        nl = simulate_nonlinear(spec, sc, start=sol)
        e, u1 = nl.moments['e'], nl.moments['u1']
        for name, ana, est, se in (
                ('mu_e', sol.mu_e, e.mean, e.stderr_mean),
                ('sigma1', sol.sigma1_hat, u1.std, u1.stderr_std),
                ('N1', sol.gains.n1, nl.non_saturation_frequency,
                 nl.stderr_non_saturation)):
            tol = max(MC_SIGMAS * se, 0.1 * abs(ana))
            worst = max(worst, abs(ana - est) / tol)
            if abs(ana - est) > tol:
                bad.append((params['index'], name, ana, est, se))
    ok = not bad
    record_criterion(9, ok, f"10 loops, max |analytic - NL| / tolerance = "
                            f"{worst:.2f} (<= 1), {time.time() - t0:.0f} s")
    assert ok, bad
