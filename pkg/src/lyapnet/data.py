"""IDX (MNIST) reading/writing and seeded synthetic datasets."""

import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InputError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.y)

    def flat(self):
        return Dataset(self.x.reshape(len(self.x), -1), self.y, self.name, self.meta)

    def subset(self, n):
        return Dataset(self.x[:n], self.y[:n], self.name, self.meta)


def _read_bytes(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, what):
    if len(raw) < 8:
        raise FormatError(f"{what} file too short for an IDX header", offset=len(raw))
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise FormatError(f"{what} file has magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{what} file truncated inside the dimension table", offset=len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise FormatError(f"{what} file holds {len(raw)} bytes, dimensions {dims} need {expected}",
                          offset=min(len(raw), expected))
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path):
    """Read an IDX image/label pair; pixels are mapped to [-0.5, 0.5] as float32."""
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, "image")
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, "label")
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels", offset=4)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"label {labels[bad]} out of range 0-9", offset=8 + bad)
    x = images.astype(np.float32) / np.float32(255.0) - np.float32(0.5)
    return Dataset(x, labels.astype(np.int64), name=os.path.basename(str(images_path)))


def write_idx(path, array):
    """Write a uint8 array as IDX (magic 0x0800|ndim)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", 0x0800 | array.ndim))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory=None):
    """Locate MNIST IDX files; returns {split: (images, labels)} or None.

    Looks in ``directory``, then ``$LYAPNET_MNIST_DIR``, then ``./data/mnist``;
    plain and ``.gz`` files are both accepted.
    """
    candidates = [directory, os.environ.get("LYAPNET_MNIST_DIR"), os.path.join("data", "mnist")]
    for d in filter(None, candidates):
        found = {}
        for split, names in MNIST_FILES.items():
            paths = []
            for name in names:
                for suffix in ("", ".gz"):
                    p = os.path.join(d, name + suffix)
                    if os.path.exists(p):
                        paths.append(p)
                        break
            if len(paths) == 2:
                found[split] = tuple(paths)
        if len(found) == 2:
            return found
    return None


def synth_dataset(classes, dim, per_class, seed, spread=1.0, noise=0.25, means=None):
    """Gaussian class blobs: class ``c`` is ``N(means[c], noise^2 I)``, shuffled with ``seed``."""
    if classes < 1 or dim < 1 or per_class < 1:
        raise InputError("classes, dim and per_class must be positive")
    rng = np.random.default_rng(seed)
    if means is None:
        means = rng.normal(0.0, spread / np.sqrt(dim), (classes, dim))
    means = np.asarray(means, dtype=np.float64)
    x = np.repeat(means, per_class, axis=0) + noise * rng.standard_normal((classes * per_class, dim))
    y = np.repeat(np.arange(classes), per_class)
    order = rng.permutation(len(y))
    return Dataset(x[order].astype(np.float32), y[order].astype(np.int64), name=f"synth-{seed}",
                   meta={"means": means, "noise": noise})


def digits_dataset(seed=0, test_fraction=0.25):
    """scikit-learn's bundled 8x8 handwritten digits scaled to [-0.5, 0.5]; returns (train, test)."""
    from sklearn.datasets import load_digits

    d = load_digits()
    x = (d.data / 16.0 - 0.5).astype(np.float32)
    y = d.target.astype(np.int64)
    order = np.random.default_rng(seed).permutation(len(y))
    cut = int(len(y) * (1 - test_fraction))
    tr, te = order[:cut], order[cut:]
    return Dataset(x[tr], y[tr], "digits-train"), Dataset(x[te], y[te], "digits-test")
