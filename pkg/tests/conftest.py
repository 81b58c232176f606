import numpy as np
import pytest

from macer.net import SmallNet


def constant_net(probs, d=2):
    """Net whose logits are log(probs) whatever the input; softmax at beta=1 gives ``probs``."""
    logits = np.log(np.asarray(probs, dtype=float))
    return SmallNet((np.zeros((d, len(logits))),), (logits,))


def halfspace_net(w, b, scale=1.0):
    """Two-class linear net: class 1 iff w.x > b. Logit gap is ``scale * (w.x - b)``."""
    w = np.asarray(w, dtype=float)
    W = np.zeros((len(w), 2))
    W[:, 1] = scale * w
    return SmallNet((W,), (np.array([0.0, -scale * b]),))


@pytest.fixture
def halfspace():
    w = np.array([0.6, -0.8, 0.0, 0.0])
    return w, 0.1


def rel_err(a, b):
    a, b = np.concatenate([v.ravel() for v in a]), np.concatenate([v.ravel() for v in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)


def fd_grads(net, f, h=1e-5):
    """Central finite differences of scalar ``f(net)`` over every parameter."""
    params = [p.copy() for p in net.params()]
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = f(SmallNet.from_params(params))
            p[idx] = orig - h
            down = f(SmallNet.from_params(params))
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def gradient_instances(count, cfg, dims=(2, 8, 3), seed=0):
    """Random (net, x, y, rng) with an active hinge, xi in (0.1, gamma - 0.1) and top margin >= 0.05."""
    from macer.net import init_net
    from macer.statmath import RngStream
    from macer.training import empirical_likelihood, xi_hat

    found, trial = [], 0
    gen = np.random.default_rng(seed)
    while len(found) < count:
        trial += 1
        net = init_net(dims, seed=seed * 10_000 + trial)
        net = SmallNet(net.weights, tuple(gen.normal(scale=0.5, size=b.shape) for b in net.biases))
        x = gen.uniform(0, 1, size=dims[0])
        rng = RngStream(seed, 3, (trial,))
        zhat = empirical_likelihood(net, x, cfg.k, cfg.sigma, cfg.beta, rng)
        y = int(np.argmax(zhat))
        top2 = np.sort(zhat)[-2:]
        xi = xi_hat(zhat, y)
        if top2[1] - top2[0] >= 0.05 and 0.1 < xi < cfg.gamma - 0.1:
            found.append((net, x, y, rng))
    return found


ACCEPTANCE_LINES = []


def report_criterion(number, title, ok, detail):
    """Record and print one acceptance line; the assertion itself is left to the caller."""
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
