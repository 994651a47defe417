"""Command-line front end.

Every subcommand reads a JSON run configuration (see ``config.SCHEMA``),
writes its results under ``--out`` and prints the path of the primary output.
Exit status is 0 on success, 2 for configuration or domain errors and 3 for
numerical failures; errors are reported on stderr as one line of JSON.
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .bivariate import (BivariateStats, compute_gains, gains_reduced_quadrature,
                        gains_series)
from .config import (ConfigError, build_bounds, build_loop, build_stats,
                     load_config)
from .design import DesignProblem, optimize_gain, write_objective_curve_csv
from .errors import DomainError, QLCError
from .loop import (SolverOptions, existence_assumptions_report,
                   fixed_point_solve, objective)
from .montecarlo import StudyConfig, monte_carlo_study
from .serialize import dump_json, format_float
from .sim import (SimConfig, accuracy_metrics, default_config,
                  simulate_nonlinear, simulate_quasilinear, write_series_csv)

__all__ = ['main', 'build_parser']

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class _Context:
    def __init__(self, args, doc):
        self.args = args
        self.doc = doc
        out = args.out or doc.get('output', {}).get('directory') or '.'
        self.out = out
        fmts = doc.get('output', {}).get('formats')
        self.formats = {args.format} if args.format else set(fmts or ['json', 'csv'])

    @property
    def seed(self):
        return 0 if self.args.seed is None else self.args.seed

    def path(self, name):
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)

    def write_json(self, name, obj):
        p = self.path(name)
        with open(p, 'w') as fh:
            dump_json(obj, fh)
        return p

    def write_csv(self, name, header, rows):
        p = self.path(name)
        with open(p, 'w', newline='') as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        return p


def _cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return format_float(v) if math.isfinite(v) else str(v)
    return '' if v is None else v


def _solver(doc):
    return SolverOptions(**doc.get('solver', {}))


def _sim_config(doc, spec, sol, seed, record=False):
    s = dict(doc.get('sim', {}))
    if 'dt' in s or 'duration' in s:
        cfg = SimConfig(seed=seed, record=record, **s)
    else:
        cfg = default_config(spec, sol.gains.n1, sol.gains.n2, seed=seed,
                             record=record, **s)
    return cfg


# gains ---------------------------------------------------------------------

def _series_opts(ctx):
    g = ctx.doc.get('gains', {})
    opts = {'override': ctx.args.override_convergence}
    for key in ('tol_percent', 'max_terms'):
        if key in g:
            opts[key] = g[key]
    return opts


def cmd_gains(ctx):
    stats, bounds = build_stats(ctx.doc), build_bounds(ctx.doc)
    g = ctx.doc.get('gains', {})
    method = g.get('method', 'reduced')
    abs_tol = g.get('abs_tol', 1e-9)
    methods = ['raw', 'reduced', 'series'] if method == 'all' else [method]
    results, failures = {}, {}
    for name in methods:
        opts = _series_opts(ctx) if name == 'series' else {'abs_tol': abs_tol}
        try:
            results[name] = compute_gains(stats, bounds, name, **opts)
        except QLCError as exc:
            if len(methods) == 1:
                raise
            failures[name] = f"{type(exc).__name__}: {exc}"
    report = {'stats': dataclasses.asdict(stats),
              'bounds': dataclasses.asdict(bounds),
              'results': {k: v.as_dict() for k, v in results.items()},
              'failures': failures}
    if len(results) > 1:
        ref = results.get('reduced') or next(iter(results.values()))
        report['disagreement'] = {
            k: max(abs(v.n1 - ref.n1), abs(v.n2 - ref.n2), abs(v.m - ref.m))
            for k, v in results.items()}
    primary = ctx.write_json('gains.json', report)
    if 'csv' in ctx.formats:
        ctx.write_csv('gains.csv', ['method', 'N1', 'N2', 'M'],
                      [(k, v.n1, v.n2, v.m) for k, v in results.items()])
    return primary


# solve ---------------------------------------------------------------------

def _solution_report(doc, spec, sol):
    gamma = doc.get('design', {}).get('gamma', 1.0)
    return {'solution': sol.as_dict(),
            'objective': objective(sol, gamma), 'gamma': gamma,
            'existence': existence_assumptions_report(spec)}


def cmd_solve(ctx):
    spec = build_loop(ctx.doc)
    sol = fixed_point_solve(spec, _solver(ctx.doc))
    return ctx.write_json('solution.json', _solution_report(ctx.doc, spec, sol))


# simulate ------------------------------------------------------------------

def cmd_simulate(ctx):
    spec = build_loop(ctx.doc)
    sol = fixed_point_solve(spec, _solver(ctx.doc))
    cfg = _sim_config(ctx.doc, spec, sol, ctx.seed, record=True)
    nl = simulate_nonlinear(spec, cfg, start=sol)
    ql = simulate_quasilinear(spec, sol, cfg)
    files = {}
    if 'csv' in ctx.formats:
        for name, res in (('nonlinear', nl), ('quasilinear', ql)):
            fname = f'series_{name}.csv'
            write_series_csv(ctx.path(fname), res.series, spec.bounds)
            files[name] = fname
    try:
        err, outm = accuracy_metrics(nl, ql)
    except QLCError:
        err = outm = math.nan
    report = dict(_solution_report(ctx.doc, spec, sol),
                  nonlinear=nl.as_dict(), quasilinear=ql.as_dict(),
                  error_metric=err, output_metric=outm, series_files=files)
    return ctx.write_json('simulate.json', report)


# montecarlo ----------------------------------------------------------------

def cmd_montecarlo(ctx):
    study = dict(ctx.doc.get('study', {}))
    for key in ('gain_range', 'time_constant_range', 'wn_range', 'xi_range',
                'alpha_range', 'beta_range', 'sigma2_levels'):
        if key in study:
            study[key] = tuple(study[key])
    cfg = StudyConfig(seed=ctx.seed, threads=ctx.args.threads, **study)
    report = monte_carlo_study(cfg)
    primary = report.to_json(ctx.path('montecarlo.json'))
    if 'csv' in ctx.formats:
        rows = []
        for rec in report.records:
            for lev in rec['levels']:
                rows.append((rec['index'], rec['plant'], rec['K'],
                             rec['alpha'], rec['beta'], lev['sigma2'],
                             lev.get('error_metric'), lev.get('output_metric'),
                             lev.get('failure', '')))
        ctx.write_csv('montecarlo_metrics.csv',
                      ['index', 'plant', 'K', 'alpha', 'beta', 'sigma2',
                       'error_metric', 'output_metric', 'failure'], rows)
        ctx.write_csv('montecarlo_rejections.csv', ['index', 'reason'],
                      [(r['index'], r['reason']) for r in report.rejections])
    return primary


# sweep ---------------------------------------------------------------------

_DEF_SIGMA2 = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0]


def _sweep_n1_sigma2(ctx, sw):
    s = ctx.doc.get('stats', {'mu1': 0.0, 'mu2': 0.0, 'sigma1': 1.0,
                               'sigma2': 0.0})
    betas = sw.get('beta_values', [0.5, 1.0, 2.0])
    rows = []
    for beta in betas:
        bounds = build_bounds({'bounds': {'alpha': -beta, 'beta': beta}})
        for s2 in sw.get('sigma2_values', _DEF_SIGMA2):
            stats = BivariateStats(s['mu1'], s['mu2'], s['sigma1'], s2,
                                   s.get('rho', 0.0) if s2 > 0 else 0.0)
            g = gains_reduced_quadrature(stats, bounds)
            rows.append((beta, s2, g.n1, g.n2, g.m))
    return ctx.write_csv('sweep_n1_sigma2.csv',
                         ['beta', 'sigma2', 'N1', 'N2', 'M'], rows)


def _sweep_rho(ctx, sw):
    base = build_loop(ctx.doc)
    alpha = base.bounds.alpha
    opts = _solver(ctx.doc)
    rows = []
    for beta in sw.get('beta_values', [-alpha]):
        for s2 in sw.get('sigma2_values', [base.bound_noise.sigma]):
            spec = base.with_bounds(build_bounds(
                {'bounds': {'alpha': alpha, 'beta': beta}}))
            spec = spec.with_signals(bound_noise=dataclasses.replace(
                spec.bound_noise, sigma=s2))
            try:
                sol = fixed_point_solve(spec, opts)
                rows.append((alpha, beta, s2, sol.rho_hat, sol.gains.n1,
                             sol.gains.n2, ''))
            except QLCError as exc:
                rows.append((alpha, beta, s2, None, None, None,
                             type(exc).__name__))
    return ctx.write_csv('sweep_rho_asymmetry.csv',
                         ['alpha', 'beta', 'sigma2', 'rho', 'N1', 'N2',
                          'failure'], rows)


def _sweep_series(ctx, sw):
    stats, bounds = build_stats(ctx.doc), build_bounds(ctx.doc)
    ref = gains_reduced_quadrature(stats, bounds, abs_tol=1e-12)
    rows = []
    for n in range(1, sw.get('max_terms', 60) + 1):
        g = gains_series(stats, bounds, tol_percent=1e-14, max_terms=n,
                         override=True)
        rows.append((n, g.n1, g.n2, g.m, abs(g.n1 - ref.n1),
                     abs(g.n2 - ref.n2), abs(g.m - ref.m)))
    return ctx.write_csv('sweep_series_accuracy.csv',
                         ['terms', 'N1', 'N2', 'M', 'err_N1', 'err_N2',
                          'err_M'], rows)


def cmd_sweep(ctx):
    sw = ctx.doc.get('sweep')
    if sw is None:
        raise ConfigError("'sweep' section is required")
    kind = {'n1_sigma2': _sweep_n1_sigma2, 'rho_asymmetry': _sweep_rho,
            'series_accuracy': _sweep_series}[sw['kind']]
    return kind(ctx, sw)


# design --------------------------------------------------------------------

def cmd_design(ctx):
    spec = build_loop(ctx.doc)
    d = dict(ctx.doc.get('design', {}))
    if 'k_bounds' in d:
        d['k_bounds'] = tuple(d['k_bounds'])
    problem = DesignProblem(spec, solver=_solver(ctx.doc), **d)
    result = optimize_gain(problem, threads=ctx.args.threads)
    if 'csv' in ctx.formats:
        write_objective_curve_csv(ctx.path('objective_curve.csv'), result.curve)
    return ctx.write_json('design.json', result.as_dict())


COMMANDS = {'gains': cmd_gains, 'solve': cmd_solve, 'simulate': cmd_simulate,
            'montecarlo': cmd_montecarlo, 'sweep': cmd_sweep,
            'design': cmd_design}


def build_parser():
    p = argparse.ArgumentParser(prog='qlc', description=__doc__.split('\n')[0])
    p.add_argument('--version', action='version', version=__version__)
    p.add_argument('command', choices=sorted(COMMANDS))
    p.add_argument('--config', required=True, help='JSON run configuration')
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--out', default=None, help='output directory')
    p.add_argument('--format', choices=['csv', 'json'], default=None,
                   help='restrict tabular outputs to one format')
    p.add_argument('--threads', type=int, default=1)
    p.add_argument('--override-convergence', action='store_true',
                   help='evaluate the series outside its admissible region')
    return p


def _fail(code, exc):
    msg = {'error': type(exc).__name__, 'message': str(exc), 'exit_code': code}
    sys.stderr.write(json.dumps(msg) + '\n')
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        return _fail(EXIT_CONFIG, ConfigError("--threads must be at least 1"))
    try:
        ctx = _Context(args, load_config(args.config))
        path = COMMANDS[args.command](ctx)
    except (DomainError, TypeError, ValueError) as exc:
        # plain TypeError/ValueError come from bad values in dataclass fields
        return _fail(EXIT_CONFIG, exc)
    except QLCError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    print(path)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
