"""Randomised accuracy study of the quasilinear predictions.

Random proportional loops (first- or second-order plants, random actuator
authority) are screened for stability and phase margin, then for every
level of bound-noise standard deviation the quasilinear loop is solved and
both loops are simulated with a shared noise sequence.  The recorded metrics
are the normalised differences of RMS tracking error and RMS actuator output.

System ``i`` draws its parameters from its own seed substream, so the report
does not depend on evaluation order or thread count.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bivariate import SatBounds
from .errors import QLCError
from .loop import SolverOptions, fixed_point_solve
from .lti import LoopSpec, SignalSpec, StateSpace, stability_and_margin
from .sim import (SimConfig, accuracy_metrics, characteristic_rates,
                  simulate_nonlinear, simulate_quasilinear)

__all__ = ['StudyConfig', 'MonteCarloReport', 'sample_system',
           'monte_carlo_study', 'accept_system', 'cutoff_rad_s']

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StudyConfig:
    """Sampling ranges, screening rule and simulation budget of the study.

    ``second_order_form`` selects ``wn^2 / (s^2 + 2 xi wn s + wn^2)``
    (``'standard'``) or the literal ``wn^2 / (s^2 + 2 xi wn s + xi^2)``
    (``'as_printed'``).  ``pm_reject`` is ``'below'`` (reject margins under
    the threshold) or ``'above'``.
    """
    n_accepted: int = 100
    max_sampled: int = None
    seed: int = 0
    gain_range: tuple = (0.01, 50.0)
    time_constant_range: tuple = (0.01, 10.0)
    wn_range: tuple = (0.01, 10.0)
    xi_range: tuple = (0.05, 2.0)
    alpha_range: tuple = (-15.0, 0.0)
    beta_range: tuple = (0.0, 15.0)
    sigma2_levels: tuple = (0.0, 1.25, 2.5, 3.75, 5.0)
    mu_r: float = 0.0
    sigma_r: float = 1.0
    mu_d: float = 0.0
    sigma_d: float = 1.0
    mu2: float = 0.0
    cutoff: float = 1430.0
    cutoff_unit: str = 'hz'
    second_order_form: str = 'standard'
    pm_threshold: float = 20.0
    pm_reject: str = 'below'
    steps: int = 400_000
    steps_per_fast: float = 20.0
    warmup_fraction: float = 0.05
    batches: int = 50
    threads: int = 1

    def __post_init__(self):
        if self.n_accepted < 1:
            raise ValueError("n_accepted must be at least 1")
        if self.cutoff_unit not in ('hz', 'rad/s'):
            raise ValueError("cutoff_unit must be 'hz' or 'rad/s'")
        if self.second_order_form not in ('standard', 'as_printed'):
            raise ValueError("second_order_form must be 'standard' or 'as_printed'")
        if self.pm_reject not in ('below', 'above'):
            raise ValueError("pm_reject must be 'below' or 'above'")

    @property
    def sample_limit(self):
        return self.max_sampled or 20 * self.n_accepted


def cutoff_rad_s(config):
    if config.cutoff_unit == 'hz':
        return 2.0 * math.pi * config.cutoff
    return float(config.cutoff)


def _rng(seed, *key):
    ss = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))


def sample_system(config, index):
    """Parameters of system ``index``: even indices first order, odd second."""
    rng = _rng(config.seed, index, 0)
    u = lambda r: float(rng.uniform(*r))    # noqa: E731
    params = {'index': index, 'K': u(config.gain_range)}
    if index % 2 == 0:
        params['plant'] = 'first_order'
        params['T'] = u(config.time_constant_range)
    else:
        params['plant'] = 'second_order'
        params['wn'] = u(config.wn_range)
        params['xi'] = u(config.xi_range)
    params['alpha'] = u(config.alpha_range)
    params['beta'] = u(config.beta_range)
    return params


def _plant(config, params):
    if params['plant'] == 'first_order':
        return StateSpace.from_tf([1.0], [params['T'], 1.0])
    wn, xi = params['wn'], params['xi']
    last = wn * wn if config.second_order_form == 'standard' else xi * xi
    return StateSpace.from_tf([wn * wn], [1.0, 2.0 * xi * wn, last])


def accept_system(config, params):
    """``(accepted, reason, phase_margin)`` for the screening rule."""
    plant = _plant(config, params)
    stable, pm = stability_and_margin(plant, StateSpace.gain(params['K']))
    if not stable:
        return False, 'unstable', pm
    if pm is not None:
        low = pm < config.pm_threshold
        if (config.pm_reject == 'below') == low:
            return False, f"phase margin {pm:.3g} deg", pm
    return True, '', pm


def _spec(config, params, sigma2):
    w = cutoff_rad_s(config)
    return LoopSpec(
        plant=_plant(config, params),
        controller=StateSpace.gain(params['K']),
        bounds=SatBounds(params['alpha'], params['beta']),
        ref=SignalSpec(config.mu_r, config.sigma_r, w),
        dist=SignalSpec(config.mu_d, config.sigma_d, w),
        bound_noise=SignalSpec(config.mu2, sigma2, w))


def _level(config, params, level_index, sigma2):
    out = {'sigma2': sigma2}
    try:
        spec = _spec(config, params, sigma2)
        sol = fixed_point_solve(spec, SolverOptions())
        fast, _ = characteristic_rates(spec, sol.gains.n1, sol.gains.n2)
        dt = 1.0 / (config.steps_per_fast * fast)
        seed = int(np.random.SeedSequence(
            config.seed, spawn_key=(params['index'], 1, level_index)
        ).generate_state(1)[0])
        sc = SimConfig(dt=dt, duration=config.steps * dt,
                       warmup=config.warmup_fraction * config.steps * dt,
                       seed=seed, batches=config.batches,
                       max_steps=config.steps)
        nl = simulate_nonlinear(spec, sc, start=sol)
        ql = simulate_quasilinear(spec, sol, sc)
        err, outm = accuracy_metrics(nl, ql)
    except QLCError as exc:
        out['failure'] = f"{type(exc).__name__}: {exc}"
        return out
    if not (math.isfinite(err) and math.isfinite(outm)):
        out['failure'] = 'non-finite metric'
        return out
    out.update({
        'error_metric': err, 'output_metric': outm,
        'N1': sol.gains.n1, 'N2': sol.gains.n2, 'M': sol.gains.m,
        'mu_e': sol.mu_e, 'sigma1_hat': sol.sigma1_hat,
        'nonlinear_non_saturation': nl.non_saturation_frequency,
        'nonlinear_e_rms': nl.moments['e'].rms,
        'quasilinear_e_rms': ql.moments['e'].rms,
        'nonlinear_v_rms': nl.moments['v'].rms,
        'quasilinear_v_rms': ql.moments['v'].rms,
    })
    return out


def _run_system(config, params):
    levels = [_level(config, params, j, s2)
              for j, s2 in enumerate(config.sigma2_levels)]
    return dict(params, levels=levels)


@dataclass
class MonteCarloReport:
    """Sampled/rejected counts, per-system records and grouped summaries."""
    n_sampled: int
    n_rejected: int
    records: list
    rejections: list
    summary: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def rejection_fraction(self):
        return self.n_rejected / self.n_sampled if self.n_sampled else 0.0

    def metrics(self, sigma2, key):
        vals = []
        for rec in self.records:
            for lev in rec['levels']:
                if lev['sigma2'] == sigma2 and key in lev:
                    vals.append(lev[key])
        return np.array(vals)

    def as_dict(self):
        return {'n_sampled': self.n_sampled, 'n_rejected': self.n_rejected,
                'rejection_fraction': self.rejection_fraction,
                'summary': self.summary, 'records': self.records,
                'rejections': self.rejections, 'config': self.config}

    def to_json(self, path):
        from .serialize import dump_json
        with open(path, 'w') as fh:
            dump_json(self.as_dict(), fh)
        return path


def _quantiles(values):
    if values.size == 0:
        return {'count': 0}
    q = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {'count': int(values.size), 'min': q[0], 'q1': q[1],
            'median': q[2], 'q3': q[3], 'max': q[4]}


def monte_carlo_study(config):
    """Run the randomised accuracy study.

    Systems are sampled in index order until ``n_accepted`` pass the
    screening (or ``sample_limit`` have been drawn).  Failures of individual
    solves or simulations are recorded in the level entry and excluded from
    the summary.
    """
    accepted, rejections = [], []
    index = 0
    while len(accepted) < config.n_accepted and index < config.sample_limit:
        params = sample_system(config, index)
        ok, reason, pm = accept_system(config, params)
        params['phase_margin'] = pm
        if ok:
            accepted.append(params)
        else:
            rejections.append({'index': index, 'reason': reason})
        index += 1

    if config.threads and config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            records = list(pool.map(lambda p: _run_system(config, p), accepted))
    else:
        records = [_run_system(config, p) for p in accepted]

    report = MonteCarloReport(n_sampled=index, n_rejected=len(rejections),
                              records=records, rejections=rejections,
                              config=asdict(config))
    for s2 in config.sigma2_levels:
        failures = sum(1 for r in records for lev in r['levels']
                       if lev['sigma2'] == s2 and 'failure' in lev)
        report.summary[format(s2, 'g')] = {
            'error_metric': _quantiles(report.metrics(s2, 'error_metric')),
            'output_metric': _quantiles(report.metrics(s2, 'output_metric')),
            'failures': failures}
    return report
