"""Hot inner loops, compiled with numba when available.

Every kernel has a vectorised numpy twin with the same signature. The
numba versions are used by default; set ``MACER_NUMBA=0`` in the
environment (before import) to force the numpy path. Both paths are
importable directly as ``numba_kernels`` / ``numpy_kernels`` so they can
be benchmarked and cross-checked against each other.
"""

import math
import os
from types import SimpleNamespace

import numpy as np
from scipy.special import erfc

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is optional
    njit = None

# Rational approximation of the lower-tail normal quantile (P. J. Acklam).
# Relative error ~1.2e-9 before the Newton refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

A0, A1, A2, A3, A4, A5 = _A
B0, B1, B2, B3, B4 = _B
C0, C1, C2, C3, C4, C5 = _C
D0, D1, D2, D3 = _D


def _lower_quantile_py(p):
    # p in (0, 0.5]; returns x <= 0 with Phi(x) = p
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((C0 * q + C1) * q + C2) * q + C3) * q + C4) * q + C5) / \
            ((((D0 * q + D1) * q + D2) * q + D3) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((A0 * r + A1) * r + A2) * r + A3) * r + A4) * r + A5) * q / \
            (((((B0 * r + B1) * r + B2) * r + B3) * r + B4) * r + 1.0)
    # one Newton step on the lower tail, where erfc keeps full relative precision
    err = 0.5 * math.erfc(-x / _SQRT2) - p
    dens = math.exp(-0.5 * x * x) / _SQRT2PI
    return x - err / dens


_lower_quantile_scalar = njit(_lower_quantile_py) if njit is not None else _lower_quantile_py


def _quantile_loop(p, p_min):
    out = np.empty(p.shape[0])
    for i in range(p.shape[0]):
        v = p[i]
        # fold onto the lower tail before clamping so both tails clamp identically;
        # 1 - v is exact for v >= 0.5
        lo = 1.0 - v if v > 0.5 else v
        if lo < p_min:
            lo = p_min
        x = _lower_quantile_scalar(lo)
        out[i] = -x if v > 0.5 else x
    return out


def _quantile_numpy(p, p_min):
    upper = p > 0.5
    lo = np.maximum(np.where(upper, 1.0 - p, p), p_min)
    x = np.empty_like(lo)
    tail = lo < _P_LOW
    q = np.sqrt(-2.0 * np.log(lo[tail]))
    x[tail] = (((((C0 * q + C1) * q + C2) * q + C3) * q + C4) * q + C5) / \
        ((((D0 * q + D1) * q + D2) * q + D3) * q + 1.0)
    q = lo[~tail] - 0.5
    r = q * q
    x[~tail] = (((((A0 * r + A1) * r + A2) * r + A3) * r + A4) * r + A5) * q / \
        (((((B0 * r + B1) * r + B2) * r + B3) * r + B4) * r + 1.0)
    err = 0.5 * erfc(-x / _SQRT2) - lo
    x = x - err / (np.exp(-0.5 * x * x) / _SQRT2PI)
    return np.where(upper, -x, x)


def _softmax_moments_loop(logits, beta, shift, first, second):
    # sums of (z - shift) and (z - shift)**2; a shift near the mean keeps the variance well conditioned
    m, k = logits.shape
    z = np.empty(k)
    for i in range(m):
        top = logits[i, 0]
        for c in range(1, k):
            if logits[i, c] > top:
                top = logits[i, c]
        total = 0.0
        for c in range(k):
            z[c] = math.exp(beta * (logits[i, c] - top))
            total += z[c]
        for c in range(k):
            v = z[c] / total - shift[c]
            first[c] += v
            second[c] += v * v


def _softmax_moments_numpy(logits, beta, shift, first, second):
    z = np.exp(beta * (logits - logits.max(axis=1, keepdims=True)))
    z /= z.sum(axis=1, keepdims=True)
    z -= shift
    first += z.sum(axis=0)
    second += (z * z).sum(axis=0)


def _vote_counts_loop(logits, counts):
    m, k = logits.shape
    for i in range(m):
        best = 0
        for c in range(1, k):
            # strict > keeps the lowest index on ties
            if logits[i, c] > logits[i, best]:
                best = c
        counts[best] += 1


def _vote_counts_numpy(logits, counts):
    counts += np.bincount(np.argmax(logits, axis=1), minlength=counts.shape[0])


numpy_kernels = SimpleNamespace(
    name="numpy",
    quantile=_quantile_numpy,
    softmax_moments=_softmax_moments_numpy,
    vote_counts=_vote_counts_numpy,
)


def _numba_wanted():
    flag = os.environ.get("MACER_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


if njit is not None:
    numba_kernels = SimpleNamespace(
        name="numba",
        quantile=njit(_quantile_loop),
        softmax_moments=njit(_softmax_moments_loop),
        vote_counts=njit(_vote_counts_loop),
    )
else:  # pragma: no cover
    numba_kernels = None

active = numba_kernels if (numba_kernels is not None and _numba_wanted()) else numpy_kernels
