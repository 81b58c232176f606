"""Datasets: synthetic Gaussian blobs and IDX (MNIST-format) files."""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (N, d), values in [0, 1]
    labels: np.ndarray  # (N,), ints in [0, K)
    num_classes: int
    name: str = ""

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DomainError(f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.num_classes < 2:
            raise DomainError("need at least 2 classes")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise DomainError("features must be finite")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.name)


def blob_centers(K, d, centers_scale):
    """K points on a circle in the first two coordinates, centred in [0, 1]^d."""
    angles = 2.0 * np.pi * np.arange(K) / K
    centers = np.full((K, d), 0.5)
    centers[:, 0] += 0.5 * centers_scale * np.cos(angles)
    centers[:, 1] += 0.5 * centers_scale * np.sin(angles)
    return centers


def make_blobs(n_per_class, K, d, centers_scale=0.6, noise_std=0.08, seed=0):
    if K < 2 or d < 2:
        raise DomainError(f"make_blobs needs K >= 2 and d >= 2, got K={K}, d={d}")
    if not 0.0 <= centers_scale <= 1.0:
        raise DomainError(f"centers_scale must lie in [0, 1], got {centers_scale!r}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(0xB10B,))))
    centers = blob_centers(K, d, centers_scale)
    labels = np.repeat(np.arange(K), n_per_class)
    X = centers[labels] + noise_std * rng.standard_normal((len(labels), d))
    return Dataset(np.clip(X, 0.0, 1.0), labels, K, f"blobs-{K}x{d}")


def _read_maybe_gzip(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def _header(blob, path, magic, ndims):
    need = 4 + 4 * ndims
    if len(blob) < need:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes, need {need})")
    got = struct.unpack_from(">I", blob, 0)[0]
    if got != magic:
        raise FormatError(f"{path}: magic number 0x{got:08x}, expected 0x{magic:08x}")
    return struct.unpack_from(f">{ndims}I", blob, 4), need


def load_idx(images_path, labels_path, limit=None, num_classes=10):
    """Load an IDX image/label pair, scaling pixels to [0, 1] by /255.

    Plain or gzip-compressed files are both accepted.
    """
    img = _read_maybe_gzip(images_path)
    lab = _read_maybe_gzip(labels_path)
    (count, rows, cols), off = _header(img, images_path, IMAGES_MAGIC, 3)
    (lcount,), loff = _header(lab, labels_path, LABELS_MAGIC, 1)
    if count != lcount:
        raise FormatError(f"record count mismatch: {images_path} has {count} images, "
                          f"{labels_path} has {lcount} labels")
    if len(img) - off != count * rows * cols:
        raise FormatError(f"{images_path}: pixel data holds {len(img) - off} bytes, "
                          f"header declares {count}x{rows}x{cols}")
    if len(lab) - loff != lcount:
        raise FormatError(f"{labels_path}: label data holds {len(lab) - loff} bytes, header declares {lcount}")
    take = count if limit is None else min(int(limit), count)
    pixels = np.frombuffer(img, dtype=np.uint8, count=take * rows * cols, offset=off)
    labels = np.frombuffer(lab, dtype=np.uint8, count=take, offset=loff).astype(np.int64)
    if take and labels.max() >= num_classes:
        raise FormatError(f"{labels_path}: label {labels.max()} outside [0, {num_classes})")
    X = pixels.reshape(take, rows * cols).astype(float) / 255.0
    return Dataset(X, labels, num_classes, "idx")


def write_idx(images, labels, images_path, labels_path, compress=False):
    """Write uint8 images of shape (N, rows, cols) and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">4I", IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    lab = struct.pack(">2I", LABELS_MAGIC, len(labels)) + labels.tobytes()
    for path, blob in ((images_path, img), (labels_path, lab)):
        if compress:
            blob = gzip.compress(blob, mtime=0)
        with open(path, "wb") as fh:
            fh.write(blob)


def minibatches(dataset, batch_size, epoch, seed):
    """Index batches from a permutation keyed by (seed, epoch); last batch may be short.

    ``dataset`` may be a :class:`Dataset` or just its length.
    """
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size!r}")
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(0xBA7C, int(epoch)))))
    order = rng.permutation(int(n))
    return [order[i:i + batch_size] for i in range(0, int(n), batch_size)]
