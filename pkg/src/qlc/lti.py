"""State-space blocks, the quasilinear closed loop, and Lyapunov tools.

The loop is the unity-feedback arrangement ``e = r - y``, ``u1 = C e``,
``v = act(u1, u2)``, ``z = v + d``, ``y = P z``, where ``r``, ``d`` and
``u2`` are coloured Gaussian signals.  The joint state is ordered
``(x_rf, x_bf, x_df, x_C, x_P)``: reference filter, bound-noise filter,
disturbance filter, controller, plant.  Noise columns are ``(w_r, w_d, w_b)``.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg as sp_linalg
from scipy import optimize as sp_optimize
from scipy import signal as sp_signal

from .bivariate import SatBounds
from .errors import (DomainError, IllPosed, NonStrictlyProper, NotHurwitz,
                     SingularSystem)

__all__ = ['StateSpace', 'SignalSpec', 'LoopSpec', 'OpenLoop', 'ClosedLoop',
           'butterworth_filter', 'lyap_solve', 'h2_norm', 'open_loop',
           'close_loop', 'closed_loop_matrices', 'dc_gain', 'inverse_dc_gain',
           'is_hurwitz', 'feedback_matrix', 'phase_margin',
           'stability_and_margin', 'SIGNALS', 'KRONECKER_MAX_STATES']

SIGNALS = ('r', 'd', 'u2', 'e', 'u1', 'v', 'z', 'y')
KRONECKER_MAX_STATES = 30


def _as2d(x, rows=None, cols=None):
    a = np.array(x, dtype=float, ndmin=2)
    if a.size == 0:
        a = np.zeros((rows or 0, cols or 0))
    return a


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Continuous-time system ``x' = A x + B u``, ``y = C x + D u``."""
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        D = _as2d(self.D)
        n = np.asarray(self.A).shape[0] if np.asarray(self.A).size else 0
        A = _as2d(self.A, n, n)
        B = _as2d(self.B, n, D.shape[1])
        C = _as2d(self.C, D.shape[0], n)
        if A.shape != (n, n) or B.shape != (n, D.shape[1]) \
                or C.shape != (D.shape[0], n):
            raise DomainError(
                f"inconsistent dimensions A{A.shape} B{B.shape} "
                f"C{C.shape} D{D.shape}")
        for name, val in zip('ABCD', (A, B, C, D)):
            if not np.all(np.isfinite(val)):
                raise DomainError(f"{name} has non-finite entries")
            object.__setattr__(self, name, val)

    @classmethod
    def from_tf(cls, num, den):
        """Realise ``num(s) / den(s)`` (descending powers), canonical form."""
        num = np.atleast_1d(np.asarray(num, dtype=float))
        den = np.trim_zeros(np.atleast_1d(np.asarray(den, dtype=float)), 'f')
        if den.size == 0:
            raise DomainError("denominator is identically zero")
        if np.trim_zeros(num, 'f').size > den.size:
            raise DomainError("transfer function is improper")
        if den.size == 1:
            num = np.trim_zeros(num, 'f')
            return cls.gain(num[-1] / den[0] if num.size else 0.0)
        A, B, C, D = sp_signal.tf2ss(num, den)
        return cls(A, B, C, D)

    @classmethod
    def gain(cls, k):
        """Static gain with no states."""
        return cls(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                   [[float(k)]])

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def is_siso(self):
        return self.D.shape == (1, 1)

    @property
    def is_strictly_proper(self):
        return not np.any(self.D)

    def evalfr(self, s):
        """Transfer matrix at the complex frequency ``s`` (scalar if SISO)."""
        if self.n_states == 0:
            g = self.D.astype(complex)
        else:
            n = self.n_states
            g = self.C @ np.linalg.solve(s * np.eye(n) - self.A, self.B) + self.D
        return complex(g[0, 0]) if self.is_siso else g

    def poles(self):
        return np.linalg.eigvals(self.A) if self.n_states else np.zeros(0)

    def scaled(self, k):
        """The system multiplied by the scalar ``k`` at its output."""
        return StateSpace(self.A, self.B, k * self.C, k * self.D)

    def to_tf(self):
        """Numerator and denominator coefficients (SISO only)."""
        if self.n_states == 0:
            return np.array([self.D[0, 0]]), np.array([1.0])
        num, den = sp_signal.ss2tf(self.A, self.B, self.C, self.D)
        return num[0], den


@dataclass(frozen=True)
class SignalSpec:
    """Coloured Gaussian signal: mean, standard deviation, filter cutoff."""
    mu: float = 0.0
    sigma: float = 0.0
    cutoff: float = 1.0
    filter_order: int = 3

    def __post_init__(self):
        if not self.sigma >= 0:
            raise DomainError(f"sigma must be nonnegative, got {self.sigma}")
        if not self.cutoff > 0:
            raise DomainError(f"cutoff must be positive, got {self.cutoff}")
        if int(self.filter_order) != self.filter_order or self.filter_order < 1:
            raise DomainError("filter_order must be a positive integer")

    def filter(self):
        return butterworth_filter(self.cutoff, self.filter_order)


@dataclass(frozen=True, eq=False)
class LoopSpec:
    """Plant, controller, actuator bounds and the three exogenous signals."""
    plant: StateSpace
    controller: StateSpace
    bounds: SatBounds
    ref: SignalSpec
    dist: SignalSpec
    bound_noise: SignalSpec

    def __post_init__(self):
        if not (self.plant.is_siso and self.controller.is_siso):
            raise DomainError("plant and controller must be SISO")
        # 1 + Dc Dp N1 is affine in N1, so nonzero on [0, 1] iff Dc Dp > -1
        if self.feedthrough <= -1.0:
            raise IllPosed(
                f"1 + Dc Dp N1 vanishes for some N1 in [0, 1] "
                f"(Dc Dp = {self.feedthrough})")

    @property
    def feedthrough(self):
        return float(self.controller.D[0, 0] * self.plant.D[0, 0])

    @cached_property
    def filters(self):
        """Unit-H2 colouring filters ``(ref, bound_noise, dist)``."""
        return (self.ref.filter(), self.bound_noise.filter(),
                self.dist.filter())

    def with_controller(self, controller):
        return LoopSpec(self.plant, controller, self.bounds, self.ref,
                        self.dist, self.bound_noise)

    def with_bounds(self, bounds):
        return LoopSpec(self.plant, self.controller, bounds, self.ref,
                        self.dist, self.bound_noise)

    def with_signals(self, ref=None, dist=None, bound_noise=None):
        return LoopSpec(self.plant, self.controller, self.bounds,
                        ref or self.ref, dist or self.dist,
                        bound_noise or self.bound_noise)


def butterworth_filter(cutoff, order=3):
    """Butterworth low-pass colouring filter with unit H2 norm.

    For order 3 the transfer function is
    ``sqrt(3/W) W^3 / (s^3 + 2 W s^2 + 2 W^2 s + W^3)``, whose H2 norm is one
    analytically; the realised norm is still computed and ``B`` rescaled so
    the convention holds to rounding.  Other orders use the analog Butterworth
    prototype.  The realisation is the unit-cutoff companion form with its
    time axis scaled by ``cutoff``, which stays well conditioned for large
    cutoffs.
    """
    if not cutoff > 0:
        raise DomainError(f"cutoff must be positive, got {cutoff}")
    if int(order) != order or order < 1:
        raise DomainError("filter order must be a positive integer")
    if order == 3:
        den = np.array([1.0, 2.0, 2.0, 1.0])
    else:
        den = np.real(np.poly(sp_signal.buttap(int(order))[1]))
    A1, B1, C1, _ = sp_signal.tf2ss([1.0], den)
    sys = StateSpace(cutoff * A1, math.sqrt(3.0 * cutoff) * B1, C1,
                     np.zeros((1, 1)))
    norm = h2_norm(sys)
    return StateSpace(sys.A, sys.B / norm, sys.C, sys.D)


def is_hurwitz(A, margin=0.0):
    """True if every eigenvalue of ``A`` has real part below ``-margin``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return True
    return bool(np.max(np.linalg.eigvals(A).real) < -margin)


def lyap_solve(A, Q):
    """Solve ``A S + S A^T + Q = 0`` for the symmetric ``S``.

    Uses the Kronecker form ``(I kron A + A kron I) vec(S) = -vec(Q)`` with
    one step of iterative refinement; beyond `KRONECKER_MAX_STATES` states a
    Bartels-Stewart solver is used instead.

    Raises
    ------
    NotHurwitz
        If ``A`` has an eigenvalue with nonnegative real part.
    SingularSystem
        If the Kronecker operator is numerically singular.

    """
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(Q)):
        raise SingularSystem("non-finite entries in the Lyapunov data")
    eig = np.linalg.eigvals(A)
    if np.max(eig.real) >= 0:
        raise NotHurwitz(
            f"max real part of eigenvalues is {np.max(eig.real):.6g}")
    Q = 0.5 * (Q + Q.T)
    if n > KRONECKER_MAX_STATES:
        S = sp_linalg.solve_continuous_lyapunov(A, -Q)
        return 0.5 * (S + S.T)

    eye = np.eye(n)
    K = np.kron(eye, A) + np.kron(A, eye)
    try:
        lu = sp_linalg.lu_factor(K, check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularSystem(str(exc)) from exc
    if np.any(np.abs(np.diag(lu[0])) <= 1e-300):
        raise SingularSystem("Kronecker operator is singular")
    rhs = -Q.ravel(order='F')
    s = sp_linalg.lu_solve(lu, rhs, check_finite=False)
    S = s.reshape((n, n), order='F')
    resid = A @ S + S @ A.T + Q
    s += sp_linalg.lu_solve(lu, -resid.ravel(order='F'), check_finite=False)
    S = s.reshape((n, n), order='F')
    if not np.all(np.isfinite(S)):
        raise SingularSystem("Lyapunov solution is not finite")
    return 0.5 * (S + S.T)


def h2_norm(sys):
    """H2 norm of a stable, strictly proper system."""
    if not sys.is_strictly_proper:
        raise NonStrictlyProper("H2 norm is infinite when D != 0")
    if sys.n_states == 0:
        return 0.0
    S = lyap_solve(sys.A, sys.B @ sys.B.T)
    return float(math.sqrt(max(np.trace(sys.C @ S @ sys.C.T), 0.0)))


@dataclass(frozen=True, eq=False)
class OpenLoop:
    """The loop with the actuator output ``v`` left as a free input.

    ``x' = A x + bv v + c + Bw w``; each signal ``s`` in `SIGNALS` except
    ``v`` is ``rows[s] @ x + vcoef[s] v + const[s]``.
    """
    A: np.ndarray
    bv: np.ndarray
    c: np.ndarray
    Bw: np.ndarray
    rows: dict
    vcoef: dict
    const: dict
    blocks: dict


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """Quasilinear loop ``x' = A x + c + B w``, signals ``rows[s] @ x + const[s]``."""
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    rows: dict
    const: dict
    blocks: dict

    def mean_state(self):
        """Steady state ``-A^{-1} c`` of the deterministic part."""
        try:
            return np.linalg.solve(self.A, -self.c)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("closed-loop A is singular") from exc

    def covariance(self):
        """Stationary covariance of the zero-mean part."""
        return lyap_solve(self.A, self.B @ self.B.T)


def _blocks(spec):
    fr, fb, fd = spec.filters
    sizes = [fr.n_states, fb.n_states, fd.n_states,
             spec.controller.n_states, spec.plant.n_states]
    edges = np.concatenate([[0], np.cumsum(sizes)])
    names = ('rf', 'bf', 'df', 'c', 'p')
    return {k: slice(edges[i], edges[i + 1]) for i, k in enumerate(names)}


def open_loop(spec):
    """Assemble the loop with the actuator output as an input."""
    fr, fb, fd = spec.filters
    ctrl, plant = spec.controller, spec.plant
    blk = _blocks(spec)
    n = blk['p'].stop
    zero = np.zeros(n)

    def row(**parts):
        out = zero.copy()
        for key, val in parts.items():
            out[blk[key]] = np.ravel(val)
        return out

    rows, vcoef, const = {}, {}, {}
    rows['r'], vcoef['r'], const['r'] = (row(rf=spec.ref.sigma * fr.C), 0.0,
                                         spec.ref.mu)
    rows['u2'], vcoef['u2'], const['u2'] = (
        row(bf=spec.bound_noise.sigma * fb.C), 0.0, spec.bound_noise.mu)
    rows['d'], vcoef['d'], const['d'] = (row(df=spec.dist.sigma * fd.C), 0.0,
                                         spec.dist.mu)
    dp = plant.D[0, 0]
    dc = ctrl.D[0, 0]
    # y = Cp xp + Dp (v + d)
    rows['y'] = row(p=plant.C) + dp * rows['d']
    vcoef['y'] = dp
    const['y'] = dp * const['d']
    for key in ('e',):
        rows[key] = rows['r'] - rows['y']
        vcoef[key] = -vcoef['y']
        const[key] = const['r'] - const['y']
    rows['u1'] = row(c=ctrl.C) + dc * rows['e']
    vcoef['u1'] = dc * vcoef['e']
    const['u1'] = dc * const['e']
    rows['z'] = rows['d'].copy()
    vcoef['z'] = 1.0
    const['z'] = const['d']

    A = np.zeros((n, n))
    bv = np.zeros(n)
    c = np.zeros(n)
    Bw = np.zeros((n, 3))
    A[blk['rf'], blk['rf']] = fr.A
    A[blk['bf'], blk['bf']] = fb.A
    A[blk['df'], blk['df']] = fd.A
    Bw[blk['rf'], 0] = fr.B[:, 0]
    Bw[blk['df'], 1] = fd.B[:, 0]
    Bw[blk['bf'], 2] = fb.B[:, 0]
    # controller driven by e, plant by z
    for key, sys, sig in (('c', ctrl, 'e'), ('p', plant, 'z')):
        s = blk[key]
        b = sys.B[:, 0]
        A[s, s] += sys.A
        A[s, :] += np.outer(b, rows[sig])
        bv[s] += b * vcoef[sig]
        c[s] += b * const[sig]
    return OpenLoop(A, bv, c, Bw, rows, vcoef, const, blk)


def close_loop(spec, n1, n2, m, ol=None):
    """Close the loop with the quasilinear actuator ``v = n1 u1 + n2 u2 + m``."""
    ol = ol or open_loop(spec)
    delta = 1.0 - n1 * ol.vcoef['u1']
    if abs(delta) < 1e-12:
        raise IllPosed(f"1 + Dc Dp N1 = {delta:.3g} at N1 = {n1}")
    vrow = (n1 * ol.rows['u1'] + n2 * ol.rows['u2']) / delta
    vconst = (n1 * ol.const['u1'] + n2 * ol.const['u2'] + m) / delta
    rows = {'v': vrow}
    const = {'v': vconst}
    for key in SIGNALS:
        if key == 'v':
            continue
        rows[key] = ol.rows[key] + ol.vcoef[key] * vrow
        const[key] = ol.const[key] + ol.vcoef[key] * vconst
    A = ol.A + np.outer(ol.bv, vrow)
    c = ol.c + ol.bv * vconst
    return ClosedLoop(A, ol.Bw.copy(), c, rows, const, ol.blocks)


def closed_loop_matrices(spec, n1, n2):
    """``A``, ``B`` and the rows ``C1`` (u1), ``C2`` (u2), ``Ce`` (e).

    The rows act on the zero-mean part of the state; the bias does not enter.
    """
    cl = close_loop(spec, n1, n2, 0.0)
    return cl.A, cl.B, cl.rows['u1'], cl.rows['u2'], cl.rows['e']


def _strip_origin(num, den):
    num = np.trim_zeros(np.asarray(num, dtype=float), 'f')
    den = np.trim_zeros(np.asarray(den, dtype=float), 'f')
    scale_n = max(np.max(np.abs(num)), 1e-300) if num.size else 1.0
    scale_d = np.max(np.abs(den))
    while (num.size > 1 and den.size > 1 and abs(num[-1]) <= 1e-12 * scale_n
           and abs(den[-1]) <= 1e-12 * scale_d):
        num, den = num[:-1], den[:-1]
    return num, den


def dc_gain(sys):
    """Zero-frequency gain; ``math.inf`` (signed) for a pole at the origin."""
    if sys.n_states == 0:
        return float(sys.D[0, 0])
    eig = np.linalg.eigvals(sys.A)
    if np.min(np.abs(eig)) > 1e-10 * max(1.0, np.max(np.abs(eig))):
        return float((sys.D - sys.C @ np.linalg.solve(sys.A, sys.B))[0, 0])
    num, den = _strip_origin(*sys.to_tf())
    if num.size == 0:
        return 0.0
    d0 = den[-1]
    if abs(d0) <= 1e-12 * np.max(np.abs(den)):
        return math.copysign(math.inf, num[-1] * den[-2] if den.size > 1
                             else num[-1])
    return float(num[-1] / d0)


def inverse_dc_gain(sys):
    """``1 / dc_gain``, zero for an integrating block."""
    g = dc_gain(sys)
    if math.isinf(g):
        return 0.0
    if g == 0.0:
        raise DomainError("block has zero DC gain; mean balance undefined")
    return 1.0 / g


def feedback_matrix(plant, controller, n1=1.0):
    """State matrix of the noise-free loop with actuator gain ``n1``."""
    nc, npl = controller.n_states, plant.n_states
    dc, dp = controller.D[0, 0], plant.D[0, 0]
    delta = 1.0 + dc * dp * n1
    if abs(delta) < 1e-12:
        raise IllPosed("1 + Dc Dp N1 vanishes")
    # e = -y, y = Cp xp + Dp n1 (Cc xc + Dc e)
    e_c = -dp * n1 * controller.C[0] / delta
    e_p = -plant.C[0] / delta
    A = np.zeros((nc + npl, nc + npl))
    A[:nc, :nc] = controller.A + np.outer(controller.B[:, 0], e_c)
    A[:nc, nc:] = np.outer(controller.B[:, 0], e_p)
    u_c = controller.C[0] + dc * e_c
    u_p = dc * e_p
    A[nc:, :nc] = n1 * np.outer(plant.B[:, 0], u_c)
    A[nc:, nc:] = plant.A + n1 * np.outer(plant.B[:, 0], u_p)
    return A


def _loop_tf(plant, controller):
    pn, pd = plant.to_tf()
    cn, cd = controller.to_tf()
    return np.polymul(pn, cn), np.polymul(pd, cd)


def phase_margin(plant, controller, points=4000):
    """Smallest phase margin (degrees) over all 0 dB crossings of ``C P``.

    Returns ``None`` when ``|C P|`` never crosses one.
    """
    num, den = _loop_tf(plant, controller)
    num = np.trim_zeros(num, 'f')
    if num.size == 0:
        return None
    roots = np.concatenate([np.roots(num), np.roots(den)])
    mags = np.abs(roots[np.abs(roots) > 1e-12])
    lo = (mags.min() if mags.size else 1.0) * 1e-4
    hi = (mags.max() if mags.size else 1.0) * 1e4
    lo = min(lo, 1e-4)
    hi = max(hi, 1e4)

    def logmag(w):
        s = 1j * w
        return np.log(np.abs(np.polyval(num, s))) - np.log(np.abs(np.polyval(den, s)))

    w = np.logspace(math.log10(lo), math.log10(hi), points)
    with np.errstate(divide='ignore'):
        g = logmag(w)
    finite = np.isfinite(g)
    margins = []
    for i in np.flatnonzero(finite[:-1] & finite[1:]
                            & (np.sign(g[:-1]) != np.sign(g[1:]))):
        wc = sp_optimize.brentq(logmag, w[i], w[i + 1], xtol=1e-14 * w[i],
                                rtol=1e-14)
        s = 1j * wc
        ang = math.degrees(np.angle(np.polyval(num, s) / np.polyval(den, s)))
        margins.append((ang + 180.0 + 180.0) % 360.0 - 180.0)
    for i in np.flatnonzero(finite & (g == 0.0)):
        s = 1j * w[i]
        ang = math.degrees(np.angle(np.polyval(num, s) / np.polyval(den, s)))
        margins.append((ang + 180.0 + 180.0) % 360.0 - 180.0)
    return min(margins) if margins else None


def stability_and_margin(plant, controller):
    """Closed-loop stability (unit actuator gain) and phase margin of ``C P``."""
    stable = is_hurwitz(feedback_matrix(plant, controller, 1.0))
    return stable, phase_margin(plant, controller)
