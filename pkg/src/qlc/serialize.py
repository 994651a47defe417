"""JSON output with every float written to 17 significant digits."""

import json
import math

import numpy as np

__all__ = ['to_plain', 'dumps', 'dump_json', 'format_float']


def format_float(x):
    """17-significant-digit text; non-finite values become JSON strings."""
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, '.17g')


def to_plain(obj):
    """Convert numpy scalars/arrays, tuples and objects with ``as_dict``."""
    if hasattr(obj, 'as_dict'):
        return to_plain(obj.as_dict())
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _encode(obj, indent, level):
    pad = '\n' + ' ' * (indent * (level + 1)) if indent else ''
    end = '\n' + ' ' * (indent * level) if indent else ''
    sep = ',' + pad if indent else ', '
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return json.dumps(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, dict):
        if not obj:
            return '{}'
        items = (json.dumps(k) + ': ' + _encode(v, indent, level + 1)
                 for k, v in obj.items())
        return '{' + pad + sep.join(items) + end + '}'
    if isinstance(obj, list):
        if not obj:
            return '[]'
        items = (_encode(v, indent, level + 1) for v in obj)
        return '[' + pad + sep.join(items) + end + ']'
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj, indent=2):
    return _encode(to_plain(obj), indent, 0)


def dump_json(obj, fh, indent=2):
    fh.write(dumps(obj, indent))
    fh.write('\n')
