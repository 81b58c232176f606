"""Gaussian CDF/quantile numerics, one-sided confidence lower bounds, and
reproducible noise streams.

All functions accept Python scalars or numpy arrays; scalar in, float out.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, erfc

from . import _kernels
from .errors import DomainError

#: Quantile arguments are clamped into [P_MIN, 1 - P_MIN] before inversion.
P_MIN = 1e-9

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unwrap(arr, scalar):
    return float(arr) if scalar else arr


def std_normal_cdf(x):
    """Standard normal CDF, accurate to ~1e-16 absolute."""
    scalar = np.ndim(x) == 0
    xa = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xa)):
        raise DomainError(f"std_normal_cdf needs finite input, got {x!r}")
    if scalar:
        return 0.5 * math.erfc(-float(xa) / _SQRT2)
    return 0.5 * erfc(-xa / _SQRT2)


def std_normal_pdf(x):
    xa = np.asarray(x, dtype=float)
    return _unwrap(_INV_SQRT2PI * np.exp(-0.5 * xa * xa), np.ndim(x) == 0)


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the clamped range [P_MIN, 1 - P_MIN].

    A rational approximation followed by one Newton step; arguments outside
    the clamp range are pulled onto its edge, so the result is always finite
    (|x| <= ~6.0).
    """
    scalar = np.ndim(p) == 0
    pa = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any(np.isnan(pa)):
        raise DomainError("std_normal_quantile got NaN")
    out = _kernels.active.quantile(np.ascontiguousarray(pa.ravel()), P_MIN)
    out = out.reshape(pa.shape)
    return float(out[0]) if scalar else out.reshape(np.shape(p))


def quantile_slope(p):
    """Derivative of the clamped quantile, 1 / phi(Phi^-1(p)), evaluated at clamp(p)."""
    return 1.0 / std_normal_pdf(std_normal_quantile(p))


def _check_alpha(alpha, upper=1.0):
    if not (0.0 < alpha <= upper):
        raise DomainError(f"alpha must lie in (0, {upper:g}], got {alpha!r}")


def clopper_pearson_lower(successes, trials, alpha, tol=1e-12):
    """Exact one-sided (1 - alpha) lower confidence bound on a binomial proportion.

    Solves P(X >= successes | trials, p) = alpha for p by bisection on the
    regularized incomplete beta function. Zero successes give 0.
    """
    _check_alpha(alpha)
    scalar = np.ndim(successes) == 0
    s = np.atleast_1d(np.asarray(successes, dtype=float))
    n = float(trials)
    if n < 1:
        raise DomainError(f"trials must be >= 1, got {trials!r}")
    if np.any(s < 0) or np.any(s > n):
        raise DomainError("successes must lie in [0, trials]")

    out = np.zeros_like(s)
    live = s > 0
    if np.any(live):
        sl = s[live]
        lo = np.zeros_like(sl)
        hi = np.ones_like(sl)
        # ~40 halvings reach tol=1e-12; the loop is short so just run it out
        while np.max(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            # upper tail P(X >= s) = I_p(s, n - s + 1), increasing in p
            above = betainc(sl, n - sl + 1.0, mid) > alpha
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        out[live] = lo
    return _unwrap(out[0], True) if scalar else out.reshape(np.shape(successes))


def hoeffding_lower(sample_mean, k, alpha):
    """Hoeffding lower bound for the mean of [0, 1]-bounded variables.

    Not clamped; the result can be negative for small ``k``.
    """
    _check_alpha(alpha)
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k!r}")
    return sample_mean - math.sqrt(-math.log(alpha) / (2.0 * k))


def bernstein_lower(sample_mean, sample_variance, k, alpha):
    """Empirical Bernstein lower bound (Maurer & Pontil) for [0, 1]-bounded variables.

    ``alpha`` may go up to 2, where the log(2/alpha) factor vanishes.
    """
    _check_alpha(alpha, upper=2.0)
    if k < 2:
        raise DomainError(f"empirical Bernstein needs k >= 2 samples, got {k!r}")
    if np.any(np.asarray(sample_variance) < 0):
        raise DomainError("sample_variance must be non-negative")
    log_term = math.log(2.0 / alpha)
    bound = (np.asarray(sample_mean, dtype=float)
             - np.sqrt(2.0 * np.asarray(sample_variance, dtype=float) * log_term / k)
             - 7.0 * log_term / (3.0 * (k - 1)))
    return _unwrap(bound, bound.ndim == 0)


@dataclass(frozen=True)
class RngStream:
    """Handle on an independent, reproducible random stream.

    Streams are keyed by ``(seed, stream_id, *path)`` and backed by the
    counter-based Philox generator; :meth:`child` derives a sub-stream
    without consuming anything from the parent.
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()

    def __post_init__(self):
        for v in (self.seed, self.stream_id, *self.path):
            if not (0 <= int(v) < 2**64):
                raise DomainError(f"stream keys must be 64-bit unsigned, got {v!r}")

    def child(self, *keys):
        return RngStream(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def generator(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.Philox(ss))


def sample_gaussian(dim, sigma, rng):
    """``dim`` i.i.d. N(0, sigma^2) draws from the start of stream ``rng``."""
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    if dim < 1:
        raise DomainError(f"dim must be >= 1, got {dim!r}")
    return sigma * rng.generator().standard_normal(int(dim))
