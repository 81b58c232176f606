"""Feedforward ReLU classifier with hand-written reverse-mode gradients.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of
shape ``(m, d)`` maps to logits via ``relu(X @ W0 + b0) @ W1 + b1 ...``.
Gradients travel as a plain list of arrays in parameter order
``[W0, b0, W1, b1, ...]``.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError

MAGIC = b"SMNET1"


@dataclass(frozen=True)
class SmallNet:
    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DomainError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DomainError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise DomainError(f"layer {i} expects {w.shape[0]} inputs, "
                                  f"previous layer gives {self.weights[i - 1].shape[1]}")
        if self.weights[-1].shape[1] < 2:
            raise DomainError("need at least 2 output classes")

    @property
    def layer_dims(self):
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def num_classes(self):
        return self.weights[-1].shape[1]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_params(cls, params):
        return cls(tuple(params[0::2]), tuple(params[1::2]))


def init_net(layer_dims, seed):
    """He-style uniform init: U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)), zero biases."""
    layer_dims = [int(v) for v in layer_dims]
    if len(layer_dims) < 2:
        raise DomainError("layer_dims needs an input and an output size")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(0x5EED,))))
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return SmallNet(tuple(weights), tuple(biases))


def zero_grads(net):
    return [np.zeros_like(p) for p in net.params()]


def _as_batch(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.layer_dims[0]:
        raise DomainError(f"input has shape {x.shape}, net expects {net.layer_dims[0]} features")
    return X, single


def forward_cache(net, X):
    """Forward pass keeping every layer input; returns (logits, acts)."""
    acts = [X]
    h = X
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return h, acts


def forward_logits(net, x):
    X, single = _as_batch(net, x)
    logits, _ = forward_cache(net, X)
    return logits[0] if single else logits


def softmax_temp(logits, beta):
    """Softmax of ``beta * logits`` along the last axis."""
    if beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta!r}")
    u = np.asarray(logits, dtype=float)
    e = np.exp(beta * (u - u.max(axis=-1, keepdims=True)))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_temp(logits, beta):
    u = beta * np.asarray(logits, dtype=float)
    u = u - u.max(axis=-1, keepdims=True)
    return u - np.log(np.exp(u).sum(axis=-1, keepdims=True))


def argmax_lowest(values):
    # np.argmax already returns the first maximal index
    return np.argmax(values, axis=-1)


def hard_predict(net, x):
    out = argmax_lowest(forward_logits(net, x))
    return int(out) if np.ndim(out) == 0 else out


def softmax_backward(probs, grad_probs, beta):
    """Pull a gradient w.r.t. softmax(beta * u) back to u, row-wise."""
    inner = np.sum(probs * grad_probs, axis=-1, keepdims=True)
    return beta * probs * (grad_probs - inner)


def logits_backward(net, acts, grad_logits):
    """Parameter gradients of ``sum(grad_logits * logits)`` given cached activations."""
    grads = [None] * (2 * len(net.weights))
    g = grad_logits
    for i in range(len(net.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i:
            g = (g @ net.weights[i].T) * (acts[i] > 0.0)
    return grads


def backward(net, x, dloss_dprobs, beta):
    """Gradient of ``sum(dloss_dprobs * softmax_temp(logits(x), beta))`` w.r.t. parameters.

    Accepts a single input or a batch; batch gradients are summed.
    """
    X, single = _as_batch(net, x)
    G = np.asarray(dloss_dprobs, dtype=float)
    G = G[None, :] if single else G
    if G.shape != (X.shape[0], net.num_classes):
        raise DomainError(f"dloss_dprobs has shape {np.shape(dloss_dprobs)}, "
                          f"expected {net.num_classes} entries per input")
    logits, acts = forward_cache(net, X)
    probs = softmax_temp(logits, beta)
    return logits_backward(net, acts, softmax_backward(probs, G, beta))


def sgd_step(net, grads, lr, momentum, state):
    """Heavy-ball SGD: v <- momentum * v + g; theta <- theta - lr * v.

    Returns ``(new_net, new_state)``; inputs are left untouched.
    """
    if lr <= 0:
        raise DomainError(f"lr must be positive, got {lr!r}")
    if not 0.0 <= momentum < 1.0:
        raise DomainError(f"momentum must lie in [0, 1), got {momentum!r}")
    new_state = [momentum * v + g for v, g in zip(state, grads)]
    new_params = [p - lr * v for p, v in zip(net.params(), new_state)]
    return SmallNet.from_params(new_params), new_state


def save_checkpoint(net, path):
    """Write ``net`` in the SMNET1 layout.

    magic ``SMNET1``; uint32 LE number of dims; uint32 LE dims; then per
    layer the weight matrix (fan_in x fan_out, row-major) and the bias, all
    float64 LE.
    """
    dims = net.layer_dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(f"<I{len(dims)}I", len(dims), *dims))
        for p in net.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    off = len(MAGIC)
    if len(blob) < off + 4:
        raise FormatError(f"{path}: truncated before layer count")
    (ndims,) = struct.unpack_from("<I", blob, off)
    off += 4
    if ndims < 2 or len(blob) < off + 4 * ndims:
        raise FormatError(f"{path}: bad layer count {ndims}")
    dims = struct.unpack_from(f"<{ndims}I", blob, off)
    off += 4 * ndims
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            size = int(np.prod(shape)) * 8
            if len(blob) < off + size:
                raise FormatError(f"{path}: truncated parameter block for shape {shape}")
            params.append(np.frombuffer(blob, dtype="<f8", count=size // 8, offset=off)
                          .astype(float).reshape(shape))
            off += size
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    net = SmallNet.from_params(params)
    if not all(np.all(np.isfinite(p)) for p in params):
        raise FormatError(f"{path}: non-finite parameter values")
    return net
