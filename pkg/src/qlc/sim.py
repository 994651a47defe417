"""Time-domain simulation of the nonlinear and quasilinear loops.

The linear part of the loop (filters, controller, plant) is discretised
exactly over a step ``dt`` with the actuator output ``v`` held constant over
the step; the filter noise enters through the exact discrete covariance, so
no ``1/sqrt(dt)`` increment scaling is involved and the coloured signals have
exactly the prescribed stationary statistics at any step size.  The
nonlinear and quasilinear runs of one configuration use the same noise
sequence, so their differences are not masked by sampling noise.

Moments are accumulated after a warm-up period and their standard errors are
estimated by batch means.
"""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sp_linalg

from . import _kernels
from .errors import DegenerateMetric, DomainError, Diverged
from .lti import close_loop, is_hurwitz, lyap_solve, open_loop

__all__ = ['SimConfig', 'SignalMoments', 'SimResult', 'colored_signal',
           'simulate_nonlinear', 'simulate_quasilinear', 'accuracy_metrics',
           'default_config', 'write_series_csv', 'characteristic_rates',
           'SERIES_COLUMNS']

log = logging.getLogger(__name__)

SERIES_COLUMNS = ('t', 'r', 'd', 'u2', 'e', 'u1', 'v', 'y')
_MOMENT_SIGNALS = ('e', 'u1', 'v', 'y')
_BLOCK = 1 << 15


@dataclass(frozen=True)
class SimConfig:
    """Step size, horizon, warm-up and seed of a simulation run.

    ``dt`` or ``duration`` left as ``None`` are chosen from the loop time
    scales by `default_config`.  ``record`` keeps a time series of every
    ``record_stride``-th step after warm-up, at most ``record_max`` rows.
    """
    dt: float = None
    duration: float = None
    warmup: float = None
    seed: int = 0
    batches: int = 50
    max_steps: int = 10_000_000
    record: bool = False
    record_stride: int = 1
    record_max: int = 200_000
    state_moments: bool = False

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.duration is not None and not self.duration > 0:
            raise DomainError("duration must be positive")
        if self.warmup is not None and self.warmup < 0:
            raise DomainError("warmup must be nonnegative")
        if (self.warmup is not None and self.duration is not None
                and self.warmup >= self.duration):
            raise DomainError("warmup must be shorter than duration")
        if self.batches < 2:
            raise DomainError("at least two batches are needed")


@dataclass(frozen=True)
class SignalMoments:
    """Sample moments of one signal with batch-means standard errors."""
    mean: float
    second_moment: float
    std: float
    stderr_mean: float
    stderr_second_moment: float
    stderr_std: float

    @property
    def rms(self):
        return math.sqrt(max(self.second_moment, 0.0))

    def as_dict(self):
        return {'mean': self.mean, 'second_moment': self.second_moment,
                'std': self.std, 'stderr_mean': self.stderr_mean,
                'stderr_second_moment': self.stderr_second_moment,
                'stderr_std': self.stderr_std}


@dataclass(frozen=True)
class SimResult:
    """Moments of e, u1, v, y, the non-saturation frequency and optional series."""
    moments: dict
    non_saturation_frequency: float
    stderr_non_saturation: float
    dt: float
    steps: int
    warmup_steps: int
    mode: str
    series: np.ndarray = field(default=None, repr=False)
    state_second_moment: np.ndarray = field(default=None, repr=False)
    stderr_state_second_moment: np.ndarray = field(default=None, repr=False)
    series_path: str = None

    def as_dict(self):
        return {'mode': self.mode, 'dt': self.dt, 'steps': self.steps,
                'warmup_steps': self.warmup_steps,
                'non_saturation_frequency': self.non_saturation_frequency,
                'stderr_non_saturation': self.stderr_non_saturation,
                'moments': {k: v.as_dict() for k, v in self.moments.items()},
                'series_path': self.series_path}


def _discretize(A, bv, c, Bw, dt):
    """Exact step map ``x+ = phi x + gv v + gc + noise`` with noise covariance."""
    n = A.shape[0]
    aug = np.zeros((n + 2, n + 2))
    aug[:n, :n] = A
    aug[:n, n] = bv
    aug[:n, n + 1] = c
    E = sp_linalg.expm(aug * dt)
    phi = E[:n, :n]
    gv = E[:n, n].copy()
    gc = E[:n, n + 1].copy()
    # Van Loan: expm([[-A, Q], [0, A^T]] dt) = [[., F12], [0, F22]],
    # phi = F22^T, Qd = phi F12
    Q = Bw @ Bw.T
    vl = np.zeros((2 * n, 2 * n))
    vl[:n, :n] = -A
    vl[:n, n:] = Q
    vl[n:, n:] = A.T
    F = sp_linalg.expm(vl * dt)
    qd = phi @ F[:n, n:]
    qd = 0.5 * (qd + qd.T)
    return phi, gv, gc, _psd_factor(qd)


def _psd_factor(S, rel=1e-14):
    """``L`` with ``L L^T = S`` restricted to the numerically nonzero modes."""
    w, V = np.linalg.eigh(S)
    top = max(w.max(initial=0.0), 0.0)
    keep = w > rel * top if top > 0 else np.zeros(w.size, bool)
    return np.ascontiguousarray(V[:, keep] * np.sqrt(w[keep]))


def characteristic_rates(spec, n1=1.0, n2=0.0):
    """Fastest and slowest relevant rates (rad/s) of the loop.

    The fastest is the largest of the filter cutoffs and the eigenvalue
    magnitudes of the open and quasilinear loops; the slowest is the smallest
    nonzero decay rate of the quasilinear loop.
    """
    ol = open_loop(spec)
    cl = close_loop(spec, n1, n2, 0.0, ol)
    eig_cl = np.linalg.eigvals(cl.A)
    eig_ol = np.linalg.eigvals(ol.A)
    cutoffs = [spec.ref.cutoff, spec.dist.cutoff, spec.bound_noise.cutoff]
    fast = max(max(cutoffs), np.abs(eig_ol).max(initial=0.0),
               np.abs(eig_cl).max(initial=0.0))
    decay = -eig_cl.real
    decay = decay[decay > 1e-12 * fast]
    slow = decay.min() if decay.size else min(cutoffs)
    return float(fast), float(slow)


def default_config(spec, n1=1.0, n2=0.0, seed=0, max_steps=10_000_000,
                   steps_per_fast=20.0, horizon=400.0, **kwargs):
    """Step ``1/(steps_per_fast * fastest rate)``, duration ``horizon/slowest``.

    The duration is capped at ``max_steps`` steps.
    """
    fast, slow = characteristic_rates(spec, n1, n2)
    dt = 1.0 / (steps_per_fast * fast)
    duration = min(horizon / slow, max_steps * dt)
    return SimConfig(dt=dt, duration=duration, warmup=0.05 * duration,
                     seed=seed, max_steps=max_steps, **kwargs)


def _resolve_config(spec, config, n1, n2):
    fast, slow = characteristic_rates(spec, n1, n2)
    dt = config.dt if config.dt is not None else 1.0 / (20.0 * fast)
    if dt > 0.1 / fast * (1 + 1e-12):
        raise DomainError(
            f"dt = {dt:.3g} s exceeds 0.1 / (fastest rate {fast:.6g} rad/s)")
    duration = config.duration
    if duration is None:
        duration = min(400.0 / slow, config.max_steps * dt)
    steps = int(round(duration / dt))
    if steps > config.max_steps:
        raise DomainError(
            f"{steps} steps requested, more than max_steps = {config.max_steps}")
    warmup = config.warmup if config.warmup is not None else 0.05 * duration
    warm = int(round(warmup / dt))
    if warm >= steps:
        raise DomainError("warmup must be shorter than duration")
    if steps - warm < config.batches:
        raise DomainError("too few steps after warm-up for the batch count")
    return dt, steps, warm


def _rows(ol):
    keys = ('r', 'd', 'u2', 'u1', 'e', 'y')
    rows = np.array([ol.rows[k] for k in keys])
    vco = np.array([ol.vcoef[k] for k in keys])
    cst = np.array([ol.const[k] for k in keys])
    # the kernel resolves the actuator feedthrough into u1 itself
    vco[3] = 0.0
    return np.ascontiguousarray(rows), vco, cst


def _initial_state(spec, ol, n1, n2, m, rng):
    """Draw from the stationary law of the quasilinear loop at (n1, n2, m).

    Falls back to stationary filters and zero controller/plant states when
    that loop is unstable.
    """
    n = ol.A.shape[0]
    try:
        cl = close_loop(spec, n1, n2, m, ol)
        if is_hurwitz(cl.A):
            mean = cl.mean_state()
            L = _psd_factor(cl.covariance())
            return mean + L @ rng.standard_normal(L.shape[1])
    except Exception:                       # noqa: BLE001 - best effort only
        log.debug("quasilinear loop unusable for the initial state")
    x = np.zeros(n)
    f = slice(0, ol.blocks['c'].start)
    A = ol.A[f, f]
    Q = (ol.Bw @ ol.Bw.T)[f, f]
    L = _psd_factor(lyap_solve(A, Q))
    x[f] = L @ rng.standard_normal(L.shape[1])
    return x


def _run(spec, config, mode, n1, n2, m, exact=False, ref_gains=None):
    ol = open_loop(spec)
    g0 = ref_gains if ref_gains is not None else (n1, n2, m)
    dt, steps, warm = _resolve_config(spec, config, g0[0], g0[1])
    kv = ol.vcoef['u1']
    if exact:
        cl = close_loop(spec, n1, n2, m, ol)
        phi, _, gc, L = _discretize(cl.A, np.zeros(cl.A.shape[0]), cl.c,
                                    cl.B, dt)
        gv = np.zeros_like(gc)
    else:
        phi, gv, gc, L = _discretize(ol.A, ol.bv, ol.c, ol.Bw, dt)
    rows, vco, cst = _rows(ol)
    b = spec.bounds
    par = np.array([b.alpha, b.beta, b.threshold, kv, n1, n2, m], dtype=float)
    kernel_mode = (_kernels.NONLINEAR if mode == 'nonlinear'
                   else _kernels.QUASILINEAR)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
    x = _initial_state(spec, ol, *g0, rng)
    n = x.size
    nb = config.batches
    batch_len = (steps - warm) // nb
    bsum = np.zeros((nb, _kernels.N_SIG))
    bsq = np.zeros((nb, _kernels.N_SIG))
    bnonsat = np.zeros(nb)
    bcount = np.zeros(nb)
    xsum = np.zeros((nb, n, n) if config.state_moments else (1, 1, 1))
    if config.record:
        nrec = min(config.record_max,
                   (steps - warm + config.record_stride - 1) // config.record_stride)
        rec = np.zeros((nrec, _kernels.N_REC))
    else:
        rec = np.zeros((0, _kernels.N_REC))
    rank = L.shape[1]
    step = 0
    while step < steps:
        size = min(_BLOCK, steps - step)
        z = rng.standard_normal((size, rank))
        done = _kernels.run_block(
            x, phi, gv, gc, L, z, rows, vco, cst, kernel_mode, par,
            step, warm, batch_len, nb, dt, bsum, bsq, bnonsat, bcount, xsum,
            config.state_moments, rec, config.record_stride, warm)
        if done < size:
            raise Diverged(f"state exceeded 1e12 at t = {(step + done) * dt:.6g} s")
        step += size

    moments = {}
    for i, key in enumerate(_MOMENT_SIGNALS):
        mean_b = bsum[:, i] / bcount
        sq_b = bsq[:, i] / bcount
        std_b = np.sqrt(np.maximum(sq_b - mean_b ** 2, 0.0))
        total = bcount.sum()
        mean = bsum[:, i].sum() / total
        second = bsq[:, i].sum() / total
        moments[key] = SignalMoments(
            mean=float(mean), second_moment=float(second),
            std=float(math.sqrt(max(second - mean * mean, 0.0))),
            stderr_mean=float(mean_b.std(ddof=1) / math.sqrt(nb)),
            stderr_second_moment=float(sq_b.std(ddof=1) / math.sqrt(nb)),
            stderr_std=float(std_b.std(ddof=1) / math.sqrt(nb)))
    freq_b = bnonsat / bcount
    state_m = state_se = None
    if config.state_moments:
        per = xsum / bcount[:, None, None]
        state_m = xsum.sum(axis=0) / bcount.sum()
        state_se = per.std(axis=0, ddof=1) / math.sqrt(nb)
    return SimResult(
        moments=moments,
        non_saturation_frequency=float(bnonsat.sum() / bcount.sum()),
        stderr_non_saturation=float(freq_b.std(ddof=1) / math.sqrt(nb)),
        dt=dt, steps=steps, warmup_steps=warm,
        mode=mode + ('-exact' if exact else ''),
        series=rec if config.record else None,
        state_second_moment=state_m, stderr_state_second_moment=state_se)


def simulate_nonlinear(spec, config, start=None):
    """Simulate the loop with the bivariate saturation in place.

    Parameters
    ----------
    spec : LoopSpec
    config : SimConfig
    start : LoopSolution or QuasilinearGains-like, optional
        Quasilinear solution whose stationary law seeds the initial state
        (and sets the default step size); without it the filters start
        stationary and the controller and plant at rest.

    Raises
    ------
    Diverged
        If any state exceeds 1e12 in magnitude.

    """
    if start is not None:
        ref = (start.gains.n1, start.gains.n2, start.m)
    else:
        ref = (1.0, 0.0, 0.0)
        try:
            if not is_hurwitz(close_loop(spec, 1.0, 0.0, 0.0).A):
                ref = (0.0, 0.0, 0.0)
        except Exception:                   # noqa: BLE001
            ref = (0.0, 0.0, 0.0)
    return _run(spec, config, 'nonlinear', 0.0, 0.0, 0.0, ref_gains=ref)


def simulate_quasilinear(spec, gains, config, m=None, exact=False):
    """Simulate the loop with the actuator replaced by ``N1 u1 + N2 u2 + m``.

    ``gains`` is a `LoopSolution` (its injected bias is used) or a
    `QuasilinearGains` together with the injected bias ``m``.  With
    ``exact`` the actuator is folded into the continuous-time dynamics, so
    the run is an exact sample path of the quasilinear loop; otherwise the
    actuator output is held over each step exactly as in the nonlinear run,
    and both runs share their noise sequence.
    """
    if hasattr(gains, 'gains'):
        m = gains.m if m is None else m
        gains = gains.gains
    if m is None:
        raise DomainError("the injected bias m is required")
    g = (gains.n1, gains.n2, m)
    return _run(spec, config, 'quasilinear', *g, exact=exact, ref_gains=g)


def colored_signal(spec, config):
    """Sample path ``mu + sigma * F(s) w`` of a coloured signal.

    Returns
    -------
    t, values : ndarray
        Times and samples after the warm-up, starting from the stationary law.

    """
    dt = config.dt if config.dt is not None else 1.0 / (20.0 * spec.cutoff)
    if dt > 0.1 / spec.cutoff * (1 + 1e-12):
        raise DomainError("dt must not exceed 0.1 / cutoff")
    duration = config.duration if config.duration is not None else 400.0 / spec.cutoff
    steps = int(round(duration / dt))
    warm = int(round((config.warmup or 0.0) / dt))
    if warm >= steps:
        raise DomainError("warmup must be shorter than duration")
    f = spec.filter()
    n = f.n_states
    phi, _, _, L = _discretize(f.A, np.zeros(n), np.zeros(n), f.B, dt)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
    x = _psd_factor(lyap_solve(f.A, f.B @ f.B.T)) @ rng.standard_normal(n)
    c = f.C[0]
    out = np.empty(steps)
    for start in range(0, steps, _BLOCK):
        size = min(_BLOCK, steps - start)
        z = rng.standard_normal((size, L.shape[1])) @ L.T
        for k in range(size):
            out[start + k] = c @ x
            x = phi @ x + z[k]
    t = np.arange(steps) * dt
    return t[warm:], spec.mu + spec.sigma * out[warm:]


def accuracy_metrics(nl, ql):
    """Normalised differences of RMS tracking error and RMS actuator output.

    Returns ``(|rms_e_nl - rms_e_ql| / rms_e_nl, |rms_v_nl - rms_v_ql| / rms_v_nl)``.
    """
    out = []
    for key in ('e', 'v'):
        ref = nl.moments[key].rms
        if ref < 1e-12:
            raise DegenerateMetric(f"RMS of {key} in the nonlinear run is ~0")
        out.append(abs(ref - ql.moments[key].rms) / ref)
    return tuple(out)


def write_series_csv(path, series, bounds=None):
    """Write a recorded series (columns `SERIES_COLUMNS`) as CSV.

    With ``bounds`` the actuator limits ``alpha - u2`` and ``beta + u2`` are
    appended as two more columns.
    """
    header = list(SERIES_COLUMNS)
    data = np.asarray(series)
    if bounds is not None:
        header += ['lower', 'upper']
        data = np.column_stack([data, bounds.alpha - data[:, 3],
                                bounds.beta + data[:, 3]])
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([format(float(v), '.17g') for v in row])
    return path
