"""Hard and soft randomized-smoothing prediction and certification.

Certification is two-stage: a selection pass of ``n0`` noisy evaluations
picks the candidate class, then ``n`` fresh evaluations on an independent
sub-stream bound its probability from below. The certified radius is the
one-sided ``sigma * Phi^-1(lower)``; it is reported only when ``lower > 1/2``.
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError
from .net import forward_logits, softmax_temp
from .statmath import (bernstein_lower, clopper_pearson_lower, hoeffding_lower,
                       std_normal_quantile)

ABSTAIN = -1

# noisy copies evaluated per forward pass; bounds peak memory, not results
CHUNK = 2048


class BoundKind(str, enum.Enum):
    CLOPPER_PEARSON = "clopper_pearson"
    HOEFFDING = "hoeffding"
    BERNSTEIN = "bernstein"


class Mode(str, enum.Enum):
    HARD = "hard"
    SOFT = "soft"


@dataclass(frozen=True)
class CertifyConfig:
    sigma: float
    n0: int = 100
    n: int = 10_000
    alpha: float = 0.001
    bound_kind: BoundKind = BoundKind.CLOPPER_PEARSON
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "bound_kind", BoundKind(self.bound_kind))
        if self.sigma <= 0:
            raise DomainError(f"sigma must be positive, got {self.sigma!r}")
        if self.n0 < 1:
            raise DomainError(f"n0 must be >= 1, got {self.n0!r}")
        if self.n < 2:
            raise DomainError(f"n must be >= 2, got {self.n!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha!r}")
        if self.beta < 0:
            raise DomainError(f"beta must be >= 0, got {self.beta!r}")


@dataclass(frozen=True)
class CertificationResult:
    outcome: int
    radius: float
    bound_kind: BoundKind
    lower_bound: float

    @property
    def abstained(self):
        return self.outcome == ABSTAIN


@dataclass(frozen=True)
class MomentMatrix:
    """Per-class sums of z and z**2 over ``num`` noisy evaluations.

    ``centered`` optionally holds the per-class sum of squared deviations from
    the mean, computed without the cancellation in ``second - first**2 / num``.
    """

    first: np.ndarray
    second: np.ndarray
    num: int
    centered: np.ndarray = None

    @property
    def mean(self):
        return self.first / self.num

    def variance(self, c):
        """Unbiased sample variance of class ``c``'s likelihood."""
        if self.num < 2:
            raise DomainError("sample variance needs at least 2 samples")
        if self.centered is not None:
            return float(self.centered[c]) / (self.num - 1)
        s2 = (self.second[c] - self.first[c] ** 2 / self.num) / (self.num - 1)
        return max(s2, 0.0)  # cancellation can dip a hair below zero


def _radius_from_pair(pa, pb, sigma, name):
    if pa < pb:
        raise DomainError(f"{name}: top probability {pa!r} is below runner-up {pb!r}")
    return 0.5 * sigma * (std_normal_quantile(pa) - std_normal_quantile(pb))


def hard_radius_from_probs(pA, pB, sigma):
    """Two-sided certified radius ``(sigma / 2) * (Phi^-1(pA) - Phi^-1(pB))``."""
    return _radius_from_pair(pA, pB, sigma, "hard_radius_from_probs")


def soft_radius_from_expectations(zy, z_runner, sigma):
    """Same formula applied to expected likelihoods of the soft smoothed classifier."""
    return _radius_from_pair(zy, z_runner, sigma, "soft_radius_from_expectations")


def noisy_logits(net, x, num, sigma, rng):
    """Yield logits of ``net`` at ``x + eta_j`` in chunks, eta_j ~ N(0, sigma^2 I).

    Noise comes from the start of ``rng`` in draw order, so the chunking
    never changes the realisations.
    """
    x = np.asarray(x, dtype=float)
    gen = rng.generator()
    left = int(num)
    while left > 0:
        m = min(left, CHUNK)
        eta = gen.standard_normal((m, x.shape[0]))
        yield forward_logits(net, x + sigma * eta)
        left -= m


def sample_under_noise(net, x, num, sigma, beta, rng):
    if num < 1:
        raise DomainError(f"num must be >= 1, got {num!r}")
    K = net.num_classes
    s1, s2 = np.zeros(K), np.zeros(K)
    shift = None
    for logits in noisy_logits(net, x, num, sigma, rng):
        if shift is None:
            shift = softmax_temp(logits[0], beta)
        _kernels.active.softmax_moments(logits, float(beta), shift, s1, s2)
    first = s1 + num * shift
    second = s2 + 2.0 * shift * s1 + num * shift * shift
    centered = np.maximum(s2 - s1 * s1 / num, 0.0)
    return MomentMatrix(first, np.minimum(second, first), int(num), centered)


def sample_votes(net, x, num, sigma, rng):
    """Per-class counts of hard predictions under noise."""
    if num < 1:
        raise DomainError(f"num must be >= 1, got {num!r}")
    counts = np.zeros(net.num_classes, dtype=np.int64)
    for logits in noisy_logits(net, x, num, sigma, rng):
        _kernels.active.vote_counts(logits, counts)
    return counts


def _finish(c_hat, lower, cfg):
    if lower > 0.5:
        return CertificationResult(int(c_hat), cfg.sigma * std_normal_quantile(lower),
                                   cfg.bound_kind, float(lower))
    return CertificationResult(ABSTAIN, 0.0, cfg.bound_kind, float(lower))


def hard_certify(net, x, cfg, rng):
    if cfg.bound_kind is not BoundKind.CLOPPER_PEARSON:
        raise DomainError(f"hard_certify uses clopper_pearson, got {cfg.bound_kind.value}")
    c_hat = int(np.argmax(sample_votes(net, x, cfg.n0, cfg.sigma, rng.child(0))))
    successes = sample_votes(net, x, cfg.n, cfg.sigma, rng.child(1))[c_hat]
    return _finish(c_hat, clopper_pearson_lower(int(successes), cfg.n, cfg.alpha), cfg)


def soft_lower_bound(moments, c, cfg):
    """Clamped lower confidence bound on class ``c``'s expected likelihood."""
    mean = moments.first[c] / moments.num
    if cfg.bound_kind is BoundKind.HOEFFDING:
        lower = hoeffding_lower(mean, moments.num, cfg.alpha)
    elif cfg.bound_kind is BoundKind.BERNSTEIN:
        lower = bernstein_lower(mean, moments.variance(c), moments.num, cfg.alpha)
    else:
        raise DomainError(f"soft certification needs hoeffding or bernstein, got {cfg.bound_kind.value}")
    return min(max(lower, 0.0), 1.0)


def soft_certify(net, x, cfg, rng):
    if cfg.bound_kind is BoundKind.CLOPPER_PEARSON:
        raise DomainError("soft_certify needs a hoeffding or bernstein bound")
    c_hat = int(np.argmax(sample_under_noise(net, x, cfg.n0, cfg.sigma, cfg.beta, rng.child(0)).first))
    moments = sample_under_noise(net, x, cfg.n, cfg.sigma, cfg.beta, rng.child(1))
    return _finish(c_hat, soft_lower_bound(moments, c_hat, cfg), cfg)


def certify(net, x, cfg, rng):
    """Dispatch on ``cfg.bound_kind``."""
    if cfg.bound_kind is BoundKind.CLOPPER_PEARSON:
        return hard_certify(net, x, cfg, rng)
    return soft_certify(net, x, cfg, rng)


def smoothed_predict(net, x, sigma, n, beta, mode, rng):
    """Monte Carlo prediction of the smoothed classifier, no abstention."""
    if Mode(mode) is Mode.HARD:
        return int(np.argmax(sample_votes(net, x, n, sigma, rng)))
    return int(np.argmax(sample_under_noise(net, x, n, sigma, beta, rng).first))
