"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per kernel, plus one certification of a
784-256-10 net with each backend swapped in. The first numba call (JIT
compile) is excluded.
"""

import argparse
import timeit

import numpy as np

from macer import _kernels
from macer.net import init_net
from macer.smoothing import CertifyConfig, hard_certify, soft_certify
from macer.statmath import P_MIN, RngStream


def kernel_cases(rng):
    p = rng.uniform(0, 1, 1_000_000)
    logits = rng.normal(size=(2048, 10))
    first, second, shift = np.zeros(10), np.zeros(10), np.full(10, 0.1)
    counts = np.zeros(10, dtype=np.int64)
    return {
        "quantile (1e6 probs)": lambda k: k.quantile(p, P_MIN),
        "softmax_moments (2048x10)": lambda k: k.softmax_moments(logits, 16.0, shift, first, second),
        "vote_counts (2048x10)": lambda k: k.vote_counts(logits, counts),
    }


def certify_cases():
    net = init_net((784, 256, 10), seed=0)
    x = np.random.default_rng(1).uniform(0, 1, 784)
    hard = CertifyConfig(0.25, 100, 1000)
    soft = CertifyConfig(0.25, 100, 1000, bound_kind="bernstein", beta=16.0)
    return {
        "hard_certify n=1000 (784-256-10)": lambda: hard_certify(net, x, hard, RngStream(0)),
        "soft_certify n=1000 (784-256-10)": lambda: soft_certify(net, x, soft, RngStream(0)),
    }


def best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.numba_kernels is None:
        raise SystemExit("numba is not installed; nothing to compare")
    backends = {"numpy": _kernels.numpy_kernels, "numba": _kernels.numba_kernels}

    print(f"{'case':<36}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}")
    for name, fn in kernel_cases(np.random.default_rng(0)).items():
        fn(backends["numba"])  # compile
        t = {b: best(lambda: fn(k), args.repeat, 3) for b, k in backends.items()}
        print(f"{name:<36}{t['numpy'] * 1e3:>11.3f}{t['numba'] * 1e3:>11.3f}{t['numpy'] / t['numba']:>8.2f}x")

    saved = _kernels.active
    try:
        for name, fn in certify_cases().items():
            t = {}
            for b, k in backends.items():
                _kernels.active = k
                fn()
                t[b] = best(fn, args.repeat, 1)
            print(f"{name:<36}{t['numpy'] * 1e3:>11.3f}{t['numba'] * 1e3:>11.3f}"
                  f"{t['numpy'] / t['numba']:>8.2f}x")
    finally:
        _kernels.active = saved


if __name__ == "__main__":
    main()
