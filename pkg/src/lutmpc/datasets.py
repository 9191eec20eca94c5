"""Dataset loaders: MNIST IDX files, label-first CSV and bundled subsets."""

import gzip
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid

_IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


@dataclass
class Split:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray

    @property
    def n_classes(self):
        return int(max(self.y_train.max(initial=0), self.y_test.max(initial=0))) + 1


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def load_idx(path):
    """Read an IDX array (big-endian magic and dimensions, optionally gzipped)."""
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise ConfigInvalid(f"{path}: not an IDX file")
    code, ndim = data[2], data[3]
    if code not in _IDX_DTYPES:
        raise ConfigInvalid(f"{path}: unknown IDX type code {code:#x}")
    dims = np.frombuffer(data, dtype=">u4", count=ndim, offset=4).astype(int)
    arr = np.frombuffer(data, dtype=_IDX_DTYPES[code], offset=4 + 4 * ndim)
    if arr.size != int(np.prod(dims)):
        raise ConfigInvalid(f"{path}: expected {int(np.prod(dims))} values, found {arr.size}")
    return arr.reshape(tuple(dims))


def load_mnist_idx(images_path, labels_path):
    """MNIST images flattened to rows with pixels in [0, 1], and int labels."""
    X = load_idx(images_path)
    y = load_idx(labels_path).astype(np.int64)
    if X.shape[0] != y.shape[0]:
        raise ConfigInvalid("image and label counts differ")
    return X.reshape(X.shape[0], -1).astype(np.float64) / 255.0, y


def load_csv(path, label_first=True, scale=1.0):
    """Headerless CSV with the label in the first (or last) column."""
    d = np.loadtxt(path, delimiter=",", ndmin=2)
    if label_first:
        y, X = d[:, 0], d[:, 1:]
    else:
        y, X = d[:, -1], d[:, :-1]
    return X / scale, y.astype(np.int64)


def load_mnist_5k():
    """The 5,000-image MNIST sample shipped with mlxtend (500 per digit)."""
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    return X.astype(np.float64) / 255.0, y.astype(np.int64)


def split(X, y, n_train, seed=0):
    idx = np.random.default_rng(seed).permutation(len(y))
    tr, te = idx[:n_train], idx[n_train:]
    return Split(X[tr], y[tr], X[te], y[te])


def mnist01(n_train=800, seed=0):
    """Digits 0 and 1 (1,000 images) from the 5k sample; label 1 means digit 1."""
    X, y = load_mnist_5k()
    keep = y <= 1
    return split(X[keep], y[keep], n_train, seed)


def mnist_subset(n_train=4000, seed=0):
    """All ten digits from the 5k sample."""
    X, y = load_mnist_5k()
    return split(X, y, n_train, seed)


def mnist_full(directory):
    """Standard MNIST train/test IDX files in ``directory`` (gzipped or not)."""
    def find(stem):
        for name in (stem, stem + ".gz"):
            p = os.path.join(directory, name)
            if os.path.exists(p):
                return p
        raise ConfigInvalid(f"{stem} not found in {directory}")

    Xtr, ytr = load_mnist_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"))
    Xte, yte = load_mnist_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"))
    return Split(Xtr, ytr, Xte, yte)


def zero_vs_rest(sp):
    """Relabel a digit split as 1 for digit 0 and 0 for every other digit."""
    return Split(sp.X_train, (sp.y_train == 0).astype(np.int64),
                 sp.X_test, (sp.y_test == 0).astype(np.int64))


def toy_separable(n=200, seed=0, margin=0.2, n_train=None):
    """Two linearly separable 2-D blobs with labels 0/1 (80% train by default)."""
    rng = np.random.default_rng(seed)
    y = (np.arange(n) % 2).astype(np.int64)
    X = rng.uniform(-1, 1, size=(n, 2))
    X[:, 0] = np.where(y == 1, np.abs(X[:, 0]) + margin, -np.abs(X[:, 0]) - margin)
    return split(X, y, int(0.8 * n) if n_train is None else n_train, seed)


def load_named(name, n_train=None, seed=0, path=None):
    """Dataset by name: ``mnist01``, ``mnist5k``, ``toy``, ``mnist`` and ``mnist0vr``
    (IDX directory in ``path``; the latter labels digit 0 against the rest) or
    ``csv`` (needs ``path``; first column is the label)."""
    if name == "mnist01":
        return mnist01(800 if n_train is None else n_train, seed)
    if name == "mnist5k":
        return mnist_subset(4000 if n_train is None else n_train, seed)
    if name == "toy":
        n = 200 if n_train is None else max(200, n_train)
        return toy_separable(n, seed, n_train=n_train)
    if name in ("mnist", "mnist0vr"):
        if path is None:
            raise ConfigInvalid(f"{name} needs a directory of IDX files")
        s = mnist_full(path)
        if n_train is not None:
            s.X_train, s.y_train = s.X_train[:n_train], s.y_train[:n_train]
        return zero_vs_rest(s) if name == "mnist0vr" else s
    if name == "csv":
        if path is None:
            raise ConfigInvalid("csv needs a file path")
        X, y = load_csv(path)
        return split(X, y, int(0.8 * len(y)) if n_train is None else n_train, seed)
    raise ConfigInvalid(f"unknown dataset {name!r}")
