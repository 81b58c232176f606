"""Build the desk-scale MNIST subset shipped under data/mnist-desk/.

Source: the 5000-image MNIST sample bundled with mlxtend
(``pip install mlxtend``). A fixed permutation picks 1000 training and
500 test images; they are written as gzip-compressed IDX files.
"""

import argparse
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

from macer.data import write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "data" / "mnist-desk")
    ap.add_argument("--train", type=int, default=1000)
    ap.add_argument("--test", type=int, default=500)
    ap.add_argument("--seed", type=int, default=20200101)
    args = ap.parse_args()

    X, y = mnist_data()
    order = np.random.default_rng(args.seed).permutation(len(y))
    X = X.reshape(-1, 28, 28).astype(np.uint8)
    args.out.mkdir(parents=True, exist_ok=True)
    splits = {"train": order[:args.train], "test": order[args.train:args.train + args.test]}
    for name, idx in splits.items():
        write_idx(X[idx], y[idx], args.out / f"{name}-images-idx3-ubyte.gz",
                  args.out / f"{name}-labels-idx1-ubyte.gz", compress=True)
        print(f"{name}: {len(idx)} images, class counts {np.bincount(y[idx], minlength=10).tolist()}")


if __name__ == "__main__":
    main()
