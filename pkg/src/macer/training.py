"""MACER objective and training loop.

Per sample, with ``zhat`` the mean of ``k`` softmax outputs under Gaussian
noise, the loss is

    -log zhat[y]  +  (lambda * sigma / 2) * max(gamma - xi_hat, 0) * [argmax zhat == y]

where ``xi_hat = Phi^-1(zhat[y]) - Phi^-1(zhat[runner_up])``. The gate,
the runner-up and the hinge activity are fixed for the step in which they
are computed; gradients flow only through ``zhat``.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import minibatches
from .errors import DomainError
from .net import (forward_cache, init_net, log_softmax_temp, logits_backward, sgd_step, softmax_backward,
                  softmax_temp, zero_grads)
from .statmath import RngStream, quantile_slope, std_normal_quantile

CE_FLOOR = 1e-12


def _check_schedule(name, schedule):
    if not schedule or schedule[0][0] != 0:
        raise DomainError(f"{name} must be non-empty and start at epoch 0")
    epochs = [e for e, _ in schedule]
    if epochs != sorted(set(epochs)):
        raise DomainError(f"{name} epochs must be strictly increasing")


def schedule_value(schedule, epoch):
    """Stepwise schedule lookup: the value of the last entry with start <= epoch."""
    value = schedule[0][1]
    for start, v in schedule:
        if start <= epoch:
            value = v
    return value


@dataclass(frozen=True)
class MacerConfig:
    sigma: float = 0.25
    k: int = 16
    lambda_schedule: tuple = ((0, 12.0),)
    gamma: float = 8.0
    beta: float = 16.0
    lr_schedule: tuple = ((0, 0.01),)
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    hidden: tuple = (64, 64)
    # use beta only in the robustness term; cross-entropy then sees beta = 1
    robust_beta_only: bool = False

    def __post_init__(self):
        lam = tuple((int(e), float(v)) for e, v in self.lambda_schedule)
        lr = tuple((int(e), float(v)) for e, v in self.lr_schedule)
        object.__setattr__(self, "lambda_schedule", lam)
        object.__setattr__(self, "lr_schedule", lr)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        _check_schedule("lambda_schedule", lam)
        _check_schedule("lr_schedule", lr)
        if self.sigma <= 0:
            raise DomainError(f"sigma must be positive, got {self.sigma!r}")
        if self.k < 1:
            raise DomainError(f"k must be >= 1, got {self.k!r}")
        if self.gamma <= 0:
            raise DomainError(f"gamma must be positive, got {self.gamma!r}")
        if self.beta <= 0:
            raise DomainError(f"beta must be positive, got {self.beta!r}")
        if any(v < 0 for _, v in lam):
            raise DomainError("lambda values must be >= 0")
        if any(v <= 0 for _, v in lr):
            raise DomainError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError(f"momentum must lie in [0, 1), got {self.momentum!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise DomainError("epochs must be >= 0 and batch_size >= 1")

    def lam(self, epoch):
        return schedule_value(self.lambda_schedule, epoch)

    def lr(self, epoch):
        return schedule_value(self.lr_schedule, epoch)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    classification: float
    robustness: float
    xi_hat: float | None
    in_correct_set: bool


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    mean_total: float
    mean_ce: float
    mean_hinge: float
    frac_in_G: float
    lr: float
    lam: float


@dataclass
class _Terms:
    ce: np.ndarray
    hinge: np.ndarray
    xi: np.ndarray  # nan outside G
    in_g: np.ndarray
    grad_ce: np.ndarray  # d ce / d zhat_ce
    grad_hinge: np.ndarray  # d hinge / d zhat


def empirical_likelihood(net, x, k, sigma, beta, rng):
    """Mean of ``k`` softmax outputs at ``x + eta_j``; noise from the start of ``rng``."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k!r}")
    x = np.asarray(x, dtype=float)
    eta = rng.generator().standard_normal((int(k), x.shape[0]))
    logits, _ = forward_cache(net, x + sigma * eta)
    return softmax_temp(logits, beta).mean(axis=0)


def _runner_up(zhat, y):
    masked = np.array(zhat, dtype=float, copy=True)
    masked[np.arange(len(y)), y] = -np.inf
    return np.argmax(masked, axis=1)


def xi_hat(zhat, y):
    """Quantile gap of the label over the runner-up, or None if ``y`` is not the argmax."""
    zhat = np.asarray(zhat, dtype=float)
    if int(np.argmax(zhat)) != int(y):
        return None
    ru = int(_runner_up(zhat[None, :], np.array([y]))[0])
    return std_normal_quantile(zhat[y]) - std_normal_quantile(zhat[ru])


def objective_terms(zhat, y, lam, sigma, gamma):
    """Vectorised per-sample loss terms and their gradients w.r.t. ``zhat``."""
    zhat = np.atleast_2d(zhat)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    rows = np.arange(len(y))

    p_y = zhat[rows, y]
    ce = -np.log(np.maximum(p_y, CE_FLOOR))
    grad_ce = np.zeros_like(zhat)
    grad_ce[rows, y] = np.where(p_y > CE_FLOOR, -1.0 / np.maximum(p_y, CE_FLOOR), 0.0)

    in_g = np.argmax(zhat, axis=1) == y
    ru = _runner_up(zhat, y)
    p_ru = zhat[rows, ru]
    xi = std_normal_quantile(p_y) - std_normal_quantile(p_ru)
    coef = 0.5 * lam * sigma
    active = in_g & (xi < gamma) & (coef > 0)
    hinge = np.where(active, coef * (gamma - xi), 0.0)
    grad_hinge = np.zeros_like(zhat)
    grad_hinge[rows, y] = np.where(active, -coef * quantile_slope(p_y), 0.0)
    grad_hinge[rows, ru] = np.where(active, coef * quantile_slope(p_ru), 0.0)
    return _Terms(ce, hinge, np.where(in_g, xi, np.nan), in_g, grad_ce, grad_hinge)


def macer_loss(zhat, y, cfg, epoch=0):
    t = objective_terms(zhat, y, cfg.lam(epoch), cfg.sigma, cfg.gamma)
    return _breakdown(t, 0)


def _breakdown(t, i):
    xi = None if np.isnan(t.xi[i]) else float(t.xi[i])
    ce, hinge = float(t.ce[i]), float(t.hinge[i])
    return LossBreakdown(ce + hinge, ce, hinge, xi, bool(t.in_g[i]))


def batch_objective(net, X, Y, cfg, eta, epoch=0):
    """Mean objective over a batch and its parameter gradient.

    ``eta`` holds standard-normal draws of shape ``(m, k, d)``; the same
    draws feed both loss terms (one forward pass). The cross-entropy is
    evaluated in log space, ``log k - logsumexp_j log z_j[y]``, which agrees
    with :func:`macer_loss` whenever ``zhat[y]`` is above the floor and keeps
    a usable gradient when it is not. Returns ``(terms, grads)``.
    """
    m, k, d = eta.shape
    Y = np.asarray(Y, dtype=np.int64)
    noisy = (X[:, None, :] + cfg.sigma * eta).reshape(m * k, d)
    logits, acts = forward_cache(net, noisy)
    K = logits.shape[1]
    logz = log_softmax_temp(logits, cfg.beta).reshape(m, k, K)
    z = np.exp(logz)
    t = objective_terms(z.mean(axis=1), Y, cfg.lam(epoch), cfg.sigma, cfg.gamma)

    beta_ce = 1.0 if cfg.robust_beta_only else cfg.beta
    if cfg.robust_beta_only:
        logz_ce = log_softmax_temp(logits, 1.0).reshape(m, k, K)
        z_ce = np.exp(logz_ce)
    else:
        logz_ce, z_ce = logz, z
    rows = np.arange(m)
    log_zy = logz_ce[rows, :, Y]  # (m, k)
    lse = logsumexp(log_zy, axis=1)
    t.ce = np.log(k) - lse
    # responsibility of noise copy j in zhat[y]
    w = np.exp(log_zy - lse[:, None])
    onehot = np.zeros((m, 1, K))
    onehot[rows, 0, Y] = 1.0
    g_logits = (beta_ce / m) * w[:, :, None] * (z_ce - onehot)
    g_logits += softmax_backward(z, t.grad_hinge[:, None, :] / (m * k), cfg.beta)
    return t, logits_backward(net, acts, g_logits.reshape(m * k, K))


def macer_loss_backward(net, x, y, cfg, rng, epoch=0):
    """Per-sample loss breakdown and its parameter gradient under noise drawn from ``rng``."""
    x = np.asarray(x, dtype=float)
    eta = rng.generator().standard_normal((cfg.k, x.shape[0]))
    t, grads = batch_objective(net, x[None, :], np.array([y]), cfg, eta[None], epoch)
    return _breakdown(t, 0), grads


def _draw_noise(rng, epoch, idx, k, d):
    return np.stack([rng.child(epoch, int(i)).generator().standard_normal((k, d)) for i in idx])


def train(dataset, cfg, rng=None, net=None, progress=None):
    """Minibatch SGD with momentum on the mean MACER objective.

    Noise for sample ``i`` in epoch ``e`` comes from sub-stream ``rng.child(e, i)``,
    so a run is a pure function of ``(dataset, cfg)``. Returns ``(net, log)``.
    """
    if len(dataset) == 0:
        raise DomainError("training set is empty")
    rng = RngStream(cfg.seed, 1) if rng is None else rng
    if net is None:
        net = init_net((dataset.dim, *cfg.hidden, dataset.num_classes), cfg.seed)
    state = zero_grads(net)
    log = []
    for epoch in range(cfg.epochs):
        lr, lam = cfg.lr(epoch), cfg.lam(epoch)
        sums = np.zeros(4)
        for idx in minibatches(dataset, cfg.batch_size, epoch, cfg.seed):
            X, Y = dataset.features[idx], dataset.labels[idx]
            eta = _draw_noise(rng, epoch, idx, cfg.k, dataset.dim)
            t, grads = batch_objective(net, X, Y, cfg, eta, epoch)
            net, state = sgd_step(net, grads, lr, cfg.momentum, state)
            sums += [np.sum(t.ce + t.hinge), np.sum(t.ce), np.sum(t.hinge), np.sum(t.in_g)]
        n = len(dataset)
        entry = EpochLog(epoch, sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, lr, lam)
        log.append(entry)
        if progress is not None:
            progress(entry)
    return net, log


LOG_HEADER = ("epoch", "mean_total", "mean_ce", "mean_hinge", "frac_in_G", "lr", "lambda")


def write_log_csv(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for e in log:
            w.writerow([e.epoch, f"{e.mean_total:.6f}", f"{e.mean_ce:.6f}", f"{e.mean_hinge:.6f}",
                        f"{e.frac_in_G:.6f}", f"{e.lr:g}", f"{e.lam:g}"])
