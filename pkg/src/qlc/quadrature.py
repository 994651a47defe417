"""Globally adaptive Gauss-Kronrod (G7/K15) quadrature for vector integrands.

The integrand receives a 1-D array of abscissae and returns either an array
of the same length or an ``(m, len(x))`` array of ``m`` integrands that share
the abscissae.  Every refinement pass evaluates all intervals being split in
one call, so numpy does the heavy lifting.
"""

import numpy as np

from .errors import NumericalError, QuadratureFailure

__all__ = ['integrate', 'integrate_semi_infinite']

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327])

# 15 nodes on [-1, 1]: the 7 negative ones, the centre, the 7 positive ones
_NODES = np.concatenate([-_XGK[:-1], [0.0], _XGK[:-1][::-1]])
_KRONROD = np.concatenate([_WGK[:-1], [_WGK[-1]], _WGK[:-1][::-1]])
_GAUSS = np.zeros(15)
_GAUSS[[1, 3, 5]] = _WG[:3]
_GAUSS[7] = _WG[3]
_GAUSS[[9, 11, 13]] = _WG[:3][::-1]


def _rule(f, lo, hi):
    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    x = centre[:, None] + half[:, None] * _NODES[None, :]
    fx = np.asarray(f(x.ravel()), dtype=float)
    scalar = fx.ndim == 1
    fx = fx.reshape((1 if scalar else fx.shape[0],) + x.shape)
    if not np.all(np.isfinite(fx)):
        raise NumericalError("integrand returned non-finite values")
    kron = (fx @ _KRONROD) * half
    gauss = (fx @ _GAUSS) * half
    err = np.max(np.abs(kron - gauss), axis=0)
    return kron, err, scalar


def integrate(f, a, b, abs_tol=1e-10, rel_tol=0.0, max_intervals=5000,
              initial_intervals=8):
    """Integrate ``f`` over the finite interval ``[a, b]``.

    Parameters
    ----------
    f : callable
        Vectorised integrand, see the module docstring.
    a, b : float
        Finite integration limits.
    abs_tol, rel_tol : float
        The estimated error of the result must not exceed
        ``max(abs_tol, rel_tol * |result|)`` (max-norm for vector integrands).
    max_intervals : int
        Refinement budget; exceeding it raises `QuadratureFailure`.

    Returns
    -------
    value : float or ndarray
        Integral estimate (array of shape ``(m,)`` for vector integrands).
    error : float
        Estimated absolute error.

    """
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("limits must be finite; use integrate_semi_infinite")
    if a == b:
        probe = np.asarray(f(np.array([a])), dtype=float)
        return (0.0 if probe.ndim == 1 else np.zeros(probe.shape[0])), 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0

    edges = np.linspace(a, b, initial_intervals + 1)
    lo, hi = edges[:-1], edges[1:]
    vals, errs, scalar = _rule(f, lo, hi)
    while True:
        total = vals.sum(axis=1)
        total_err = errs.sum()
        target = max(abs_tol, rel_tol * np.max(np.abs(total)))
        if total_err <= target:
            break
        if lo.size >= max_intervals:
            raise QuadratureFailure(
                f"estimated error {total_err:.3e} above {target:.3e} "
                f"after {lo.size} intervals")
        # split every interval carrying more than its share of the budget,
        # and always the worst one
        split = errs > target / (2.0 * lo.size)
        split[np.argmax(errs)] = True
        mid = 0.5 * (lo[split] + hi[split])
        new_lo = np.concatenate([lo[split], mid])
        new_hi = np.concatenate([mid, hi[split]])
        new_vals, new_errs, _ = _rule(f, new_lo, new_hi)
        keep = ~split
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        vals = np.concatenate([vals[:, keep], new_vals], axis=1)
        errs = np.concatenate([errs[keep], new_errs])

    total = sign * vals.sum(axis=1)
    return (float(total[0]) if scalar else total), float(total_err)


def integrate_semi_infinite(f, a, abs_tol=1e-10, rel_tol=0.0,
                            max_intervals=5000):
    """Integrate ``f`` over ``[a, inf)`` via ``t = a + s / (1 - s)``."""
    def mapped(s):
        one_minus = 1.0 - s
        t = a + s / one_minus
        jac = 1.0 / (one_minus * one_minus)
        return np.asarray(f(t)) * jac

    return integrate(mapped, 0.0, 1.0, abs_tol=abs_tol, rel_tol=rel_tol,
                     max_intervals=max_intervals)
