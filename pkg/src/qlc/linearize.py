"""Stochastic linearization of a static nonlinearity with Gaussian inputs.

For a piecewise differentiable ``f`` and a Gaussian input vector ``u`` with
mean ``mu``, the affine map ``N^T (u - mu) + M`` minimising the mean-square
error has ``N = E[grad f(u)]`` and ``M = E[f(u)]``.  `mc_linearize` estimates
both by sampling; it is the brute-force reference every closed form in this
package is checked against.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError
from .specfun import std_normal_cdf

__all__ = ['GaussianVectorSpec', 'LinearizationResult', 'mc_linearize',
           'univariate_sl_saturation', 'sample_gaussian', 'mse_of_affine',
           'CHUNK_SIZE']

# Draws are generated in fixed-size chunks, one RNG substream per chunk, so
# results do not depend on how the chunks are scheduled.
CHUNK_SIZE = 1 << 17


@dataclass(frozen=True)
class GaussianVectorSpec:
    """Mean vector and covariance matrix of a Gaussian input vector."""
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DomainError("covariance shape does not match the mean")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
            raise DomainError("covariance must be symmetric")
        if cov.size and np.linalg.eigvalsh(cov).min() < -1e-12 * max(abs(cov).max(), 1.0):
            raise DomainError("covariance has a negative eigenvalue")
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'covariance', cov)

    @property
    def n(self):
        return self.mean.size

    def cholesky(self):
        try:
            return np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError as exc:
            raise DomainError("covariance is not positive definite") from exc


@dataclass(frozen=True)
class LinearizationResult:
    gains: np.ndarray
    bias: float
    stderr_gains: np.ndarray
    stderr_bias: float


def _chunk_sizes(samples):
    full, rest = divmod(samples, CHUNK_SIZE)
    return [CHUNK_SIZE] * full + ([rest] if rest else [])


def sample_gaussian(spec, samples, seed):
    """Yield successive ``(k, n)`` blocks of draws from ``spec``.

    Block ``i`` comes from substream ``i`` of ``SeedSequence(seed)``.
    """
    chol = spec.cholesky()
    sizes = _chunk_sizes(samples)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    for size, ss in zip(sizes, streams):
        rng = np.random.Generator(np.random.Philox(ss))
        z = rng.standard_normal((size, spec.n))
        yield spec.mean + z @ chol.T


def mc_linearize(f, grad, spec, samples=1_000_000, seed=0):
    """Monte Carlo estimate of the stochastic-linearization gains and bias.

    Parameters
    ----------
    f : callable
        Vectorised nonlinearity; maps a ``(k, n)`` array of inputs to ``(k,)``.
    grad : callable
        Vectorised gradient of ``f``; maps ``(k, n)`` to ``(k, n)``.
    spec : GaussianVectorSpec
        Input distribution; its covariance must be positive definite.
    samples : int
        Number of draws (at least 1000).
    seed : int
        Seed of the substream family.

    Returns
    -------
    LinearizationResult
        Sample means of ``grad f`` and ``f`` with their standard errors.

    """
    if samples < 1000:
        raise DomainError("at least 1000 samples are required")
    n = spec.n
    s_g = np.zeros(n)
    s_gg = np.zeros(n)
    s_f = 0.0
    s_ff = 0.0
    for u in sample_gaussian(spec, samples, seed):
        fv = np.asarray(f(u), dtype=float)
        gv = np.asarray(grad(u), dtype=float).reshape(u.shape)
        if not (np.all(np.isfinite(fv)) and np.all(np.isfinite(gv))):
            raise NumericalError("nonlinearity returned non-finite values")
        s_f += fv.sum()
        s_ff += np.dot(fv, fv)
        s_g += gv.sum(axis=0)
        s_gg += (gv * gv).sum(axis=0)

    mean_f = s_f / samples
    mean_g = s_g / samples
    var_f = max(s_ff / samples - mean_f ** 2, 0.0) * samples / (samples - 1)
    var_g = np.maximum(s_gg / samples - mean_g ** 2, 0.0) * samples / (samples - 1)
    return LinearizationResult(
        gains=mean_g,
        bias=float(mean_f),
        stderr_gains=np.sqrt(var_g / samples),
        stderr_bias=float(np.sqrt(var_f / samples)),
    )


def mse_of_affine(f, spec, gains, bias, samples=200_000, seed=0):
    """Sample estimate of ``E[(f(u) - N^T (u - mu) - M)^2]`` and its stderr."""
    s = 0.0
    ss = 0.0
    for u in sample_gaussian(spec, samples, seed):
        r = f(u) - (u - spec.mean) @ np.asarray(gains) - bias
        r2 = r * r
        s += r2.sum()
        ss += np.dot(r2, r2)
    mean = s / samples
    var = max(ss / samples - mean ** 2, 0.0)
    return mean, np.sqrt(var / samples)


def univariate_sl_saturation(mu, sigma, alpha, beta):
    """Quasilinear gain and bias of ``clip(u, alpha, beta)``, u ~ N(mu, sigma^2).

    Returns
    -------
    N : float
        ``P(alpha < u < beta)``.
    M : float
        ``E[clip(u, alpha, beta)]`` from the Gaussian partial moments.

    """
    if alpha > beta:
        raise DomainError(f"alpha = {alpha} exceeds beta = {beta}")
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    lo = (alpha - mu) / sigma
    hi = (beta - mu) / sigma
    cdf_lo, cdf_hi = std_normal_cdf(lo), std_normal_cdf(hi)
    pdf_lo = np.exp(-0.5 * lo * lo) / np.sqrt(2 * np.pi)
    pdf_hi = np.exp(-0.5 * hi * hi) / np.sqrt(2 * np.pi)
    gain = cdf_hi - cdf_lo
    # the clipped tails contribute alpha*P(u<alpha) and beta*P(u>beta)
    tails = 0.0
    if np.isfinite(alpha):
        tails += alpha * cdf_lo
    if np.isfinite(beta):
        tails += beta * std_normal_cdf(-hi)
    bias = tails + mu * gain + sigma * (pdf_lo - pdf_hi)
    return float(gain), float(bias)
