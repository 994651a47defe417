"""Run configuration: JSON schema and conversion to library objects."""

import json

import jsonschema

from .bivariate import BivariateStats, SatBounds
from .errors import DomainError
from .lti import LoopSpec, SignalSpec, StateSpace

__all__ = ['SCHEMA', 'ConfigError', 'load_config', 'validate_config',
           'build_system', 'build_loop', 'build_stats', 'build_bounds']


class ConfigError(DomainError):
    """The configuration document is malformed or fails validation."""


_num = {'type': 'number'}
_pos = {'type': 'number', 'exclusiveMinimum': 0}
_nonneg = {'type': 'number', 'minimum': 0}
_vec = {'type': 'array', 'items': _num, 'minItems': 1}
_mat = {'type': 'array', 'items': {'type': 'array', 'items': _num}}
_pair = {'type': 'array', 'items': _num, 'minItems': 2, 'maxItems': 2}


def _obj(props, required=()):
    return {'type': 'object', 'properties': props,
            'required': list(required), 'additionalProperties': False}


_BLOCK = {'oneOf': [
    _obj({'num': _vec, 'den': _vec}, ['num', 'den']),
    _obj({'A': _mat, 'B': _mat, 'C': _mat, 'D': _mat}, ['A', 'B', 'C', 'D']),
    _obj({'gain': _num}, ['gain']),
]}

_SIGNAL = _obj({'mu': _num, 'sigma': _nonneg, 'cutoff': _pos,
                'filter_order': {'type': 'integer', 'minimum': 1}})

SCHEMA = _obj({
    'system': _obj({'plant': _BLOCK, 'controller': _BLOCK}),
    'bounds': _obj({'alpha': _num, 'beta': _num}, ['alpha', 'beta']),
    'signals': _obj({'ref': _SIGNAL, 'dist': _SIGNAL, 'bound_noise': _SIGNAL}),
    'stats': _obj({'mu1': _num, 'mu2': _num, 'sigma1': _pos,
                   'sigma2': _nonneg,
                   'rho': {'type': 'number', 'minimum': -0.999,
                           'maximum': 0.999}},
                  ['mu1', 'mu2', 'sigma1', 'sigma2']),
    'gains': _obj({'method': {'enum': ['raw', 'reduced', 'series', 'all']},
                   'abs_tol': _pos, 'tol_percent': _pos,
                   'max_terms': {'type': 'integer', 'minimum': 1}}),
    'solver': _obj({'tol': _pos, 'max_iter': {'type': 'integer', 'minimum': 1},
                    'method': {'enum': ['newton', 'picard']},
                    'damping': {'type': 'number', 'exclusiveMinimum': 0,
                                'maximum': 1},
                    'quad_tol': _pos}),
    'sim': _obj({'dt': _pos, 'duration': _pos, 'warmup': _nonneg,
                 'batches': {'type': 'integer', 'minimum': 2},
                 'max_steps': {'type': 'integer', 'minimum': 1},
                 'record_stride': {'type': 'integer', 'minimum': 1},
                 'record_max': {'type': 'integer', 'minimum': 0}}),
    'study': _obj({
        'n_accepted': {'type': 'integer', 'minimum': 1},
        'max_sampled': {'type': 'integer', 'minimum': 1},
        'gain_range': _pair, 'time_constant_range': _pair,
        'wn_range': _pair, 'xi_range': _pair, 'alpha_range': _pair,
        'beta_range': _pair,
        'sigma2_levels': {'type': 'array', 'items': _nonneg, 'minItems': 1},
        'mu_r': _num, 'sigma_r': _nonneg, 'mu_d': _num, 'sigma_d': _nonneg,
        'mu2': _num, 'cutoff': _pos, 'cutoff_unit': {'enum': ['hz', 'rad/s']},
        'second_order_form': {'enum': ['standard', 'as_printed']},
        'pm_threshold': _num, 'pm_reject': {'enum': ['below', 'above']},
        'steps': {'type': 'integer', 'minimum': 100},
        'steps_per_fast': {'type': 'number', 'minimum': 10},
        'warmup_fraction': {'type': 'number', 'minimum': 0, 'exclusiveMaximum': 1},
        'batches': {'type': 'integer', 'minimum': 2}}),
    'design': _obj({'gamma': _pos, 'k_bounds': _pair, 'k_init': _pos,
                    'grid_points': {'type': 'integer', 'minimum': 3},
                    'rel_tol': _pos}),
    'sweep': _obj({
        'kind': {'enum': ['n1_sigma2', 'rho_asymmetry', 'series_accuracy']},
        'beta_values': _vec, 'sigma2_values': {'type': 'array', 'items': _nonneg,
                                               'minItems': 1},
        'max_terms': {'type': 'integer', 'minimum': 1}}, ['kind']),
    'output': _obj({'directory': {'type': 'string'},
                    'formats': {'type': 'array',
                                'items': {'enum': ['csv', 'json']}}}),
})


def validate_config(doc):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = '/'.join(str(p) for p in exc.absolute_path) or '<root>'
        raise ConfigError(f"{where}: {exc.message}") from None
    return doc


def load_config(path):
    """Read and validate a JSON configuration file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return validate_config(doc)


def build_system(block):
    if 'gain' in block:
        return StateSpace.gain(block['gain'])
    if 'num' in block:
        return StateSpace.from_tf(block['num'], block['den'])
    return StateSpace(block['A'], block['B'], block['C'], block['D'])


def build_bounds(doc):
    if 'bounds' not in doc:
        raise ConfigError("'bounds' section is required")
    return SatBounds(doc['bounds']['alpha'], doc['bounds']['beta'])


def build_stats(doc):
    if 'stats' not in doc:
        raise ConfigError("'stats' section is required")
    s = doc['stats']
    return BivariateStats(s['mu1'], s['mu2'], s['sigma1'], s['sigma2'],
                          s.get('rho', 0.0))


def _signal(doc, key):
    return SignalSpec(**doc.get('signals', {}).get(key, {}))


def build_loop(doc):
    """LoopSpec from the ``system``, ``bounds`` and ``signals`` sections."""
    system = doc.get('system', {})
    if 'plant' not in system or 'controller' not in system:
        raise ConfigError("'system' needs both 'plant' and 'controller'")
    return LoopSpec(build_system(system['plant']),
                    build_system(system['controller']), build_bounds(doc),
                    _signal(doc, 'ref'), _signal(doc, 'dist'),
                    _signal(doc, 'bound_noise'))
