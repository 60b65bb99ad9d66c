"""Image/label loading for the learning experiments.

Reads the classic big-endian IDX files when a directory with them is
available; otherwise falls back to a synthetic 10-class Gaussian mixture with
the same shapes, so every experiment runs in a sealed environment. The
fallback is deliberately easy enough that a small classifier learns it in a
few dozen full-batch rounds, matching the role the real digits play in the
experiments.
"""

import os
import struct
import warnings

import numpy as np

from .streams import DOMAIN_DATA, substream

__all__ = ["load_idx_images", "load_idx_labels", "synthetic_digits",
           "load_dataset"]

_IDX_IMAGES_MAGIC = 2051
_IDX_LABELS_MAGIC = 2049


def load_idx_images(path) -> np.ndarray:
    """Images as floats in [0, 1], flattened to (n, rows*cols)."""
    with open(path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", f.read(16))
        if magic != _IDX_IMAGES_MAGIC:
            raise ValueError("not an IDX image file: magic %d" % magic)
        data = np.frombuffer(f.read(n * rows * cols), dtype=np.uint8)
    return data.reshape(n, rows * cols).astype(float) / 255.0


def load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, n = struct.unpack(">II", f.read(8))
        if magic != _IDX_LABELS_MAGIC:
            raise ValueError("not an IDX label file: magic %d" % magic)
        return np.frombuffer(f.read(n), dtype=np.uint8).astype(np.int64)


def synthetic_digits(n_train, n_test, seed, n_features=784, n_classes=10):
    """Sparse stroke-pattern stand-in with IDX-like shapes and value range.

    Each class lights a random ~11% subset of pixels at high intensity over a
    dark background, like a thresholded digit. Sparsity matters, not just
    separability: with dense all-positive inputs, full-batch descent at unit
    step kills ReLU units wholesale and training flatlines, which real digits
    do not do.
    """
    rng = substream(seed, DOMAIN_DATA)
    means = np.zeros((n_classes, n_features))
    n_on = max(1, int(0.11 * n_features))
    for c in range(n_classes):
        means[c, rng.choice(n_features, n_on, replace=False)] = 0.8

    def draw(n):
        y = rng.integers(0, n_classes, size=n)
        x = means[y] + rng.normal(scale=0.25, size=(n, n_features))
        return np.clip(x, 0.0, 1.0), y

    x_tr, y_tr = draw(n_train)
    x_te, y_te = draw(n_test)
    return x_tr, y_tr, x_te, y_te


def load_dataset(data_dir, n_train, n_test, seed):
    """IDX files from data_dir if present, synthetic mixture otherwise.

    Expects train-images-idx3-ubyte / train-labels-idx1-ubyte (and the t10k
    pair) inside data_dir. Subsampling to n_train/n_test keeps desk-scale
    runs fast.
    """
    names = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    if data_dir and all(os.path.exists(os.path.join(data_dir, n)) for n in names):
        x_tr = load_idx_images(os.path.join(data_dir, names[0]))
        y_tr = load_idx_labels(os.path.join(data_dir, names[1]))
        x_te = load_idx_images(os.path.join(data_dir, names[2]))
        y_te = load_idx_labels(os.path.join(data_dir, names[3]))
        rng = substream(seed, DOMAIN_DATA)
        tr = rng.permutation(len(y_tr))[:n_train]
        te = rng.permutation(len(y_te))[:n_test]
        return x_tr[tr], y_tr[tr], x_te[te], y_te[te]
    if data_dir:
        warnings.warn("IDX files not found under %r; using the synthetic "
                      "mixture instead" % data_dir)
    return synthetic_digits(n_train, n_test, seed)
