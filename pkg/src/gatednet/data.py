"""IDX (MNIST) parsing, synthetic Gaussian blobs, normalization and batching."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

DATA_DIR_ENV = "GATEDNET_DATA_DIR"


class IDXParseError(ValueError):
    """Malformed IDX file; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    features: np.ndarray  # (N, D) float64
    labels: np.ndarray  # (N,) int64
    n_classes: int
    name: str = ""
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _open_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse one big-endian IDX file of unsigned bytes into an ndarray."""
    raw = _open_bytes(path)
    if len(raw) < 4:
        raise IDXParseError(f"{path}: truncated header", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IDXParseError(
            f"{path}: bad magic 0x{magic:08X}, expected 0x{expected_magic:08X}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXParseError(f"{path}: truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + size:
        raise IDXParseError(
            f"{path}: expected {size} data bytes, found {len(raw) - header}", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an uncompressed IDX file (type code 0x08)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_idx(images_path, labels_path, name: str = "mnist") -> Dataset:
    """Images scaled by 1/255 and flattened; labels as int64."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"{images_path} has {images.shape[0]} images but {labels_path} has "
            f"{labels.shape[0]} labels")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    n_classes = max(10, int(labels.max()) + 1) if labels.size else 10
    return Dataset(feats, labels.astype(np.int64), n_classes, name, {"scale": 1.0 / 255.0})


def find_mnist(data_dir=None) -> dict[str, tuple[Path, Path]] | None:
    """Locate MNIST IDX files (optionally ``.gz``) in ``data_dir`` or ``$GATEDNET_DATA_DIR``."""
    base = data_dir or os.environ.get(DATA_DIR_ENV)
    if not base:
        return None
    out = {}
    for split, names in MNIST_FILES.items():
        found = []
        for stem in names:
            for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
                p = Path(base) / cand
                if p.exists():
                    found.append(p)
                    break
        if len(found) != 2:
            return None
        out[split] = tuple(found)
    return out


def load_mnist(data_dir=None) -> tuple[Dataset, Dataset]:
    files = find_mnist(data_dir)
    if files is None:
        where = data_dir or os.environ.get(DATA_DIR_ENV) or "<unset>"
        raise FileNotFoundError(f"MNIST IDX files not found in {where}")
    train = load_idx(*files["train"], name="mnist-train")
    test = load_idx(*files["test"], name="mnist-test")
    return train, test


def synth_blobs(n_per_class: int, C: int, D: int, spread: float,
                rng: np.random.Generator, center_scale: float = 1.0,
                n_informative: int | None = None) -> Dataset:
    """Isotropic Gaussian clusters around random centers; label = cluster id.

    With ``n_informative`` set, only the first that many features separate the
    classes; the remaining ones are pure noise shared by every class.
    """
    if C < 2 or D < 2:
        raise ValueError("need C >= 2 classes and D >= 2 features")
    centers = rng.normal(0.0, center_scale, size=(C, D))
    if n_informative is not None:
        if not 1 <= n_informative <= D:
            raise ValueError(f"n_informative must be in [1, {D}], got {n_informative}")
        centers[:, n_informative:] = 0.0
    feats = np.empty((n_per_class * C, D))
    labels = np.repeat(np.arange(C), n_per_class)
    for c in range(C):
        rows = slice(c * n_per_class, (c + 1) * n_per_class)
        feats[rows] = centers[c] + spread * rng.normal(size=(n_per_class, D))
    return Dataset(feats, labels.astype(np.int64), C, f"blobs-{C}x{D}")


def train_test_split(ds: Dataset, test_fraction: float,
                     rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    n = len(ds)
    order = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    te, tr = order[:n_test], order[n_test:]
    return (Dataset(ds.features[tr], ds.labels[tr], ds.n_classes, ds.name + "-train"),
            Dataset(ds.features[te], ds.labels[te], ds.n_classes, ds.name + "-test"))


def standardize(train: Dataset, *others: Dataset, eps: float = 1e-8) -> list[Dataset]:
    """Per-feature standardization with statistics from ``train`` only."""
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0) + eps
    record = {"mean": mean, "std": std}
    out = []
    for ds in (train, *others):
        out.append(replace(ds, features=(ds.features - mean) / std,
                           normalization={**ds.normalization, **record}))
    return out


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.Generator(np.random.PCG64([seed, epoch])).permutation(n)


def batches(ds: Dataset, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index arrays for one epoch; order fixed by ``(seed, epoch)``, last partial batch kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = epoch_order(len(ds), seed, epoch)
    return [order[i:i + batch_size] for i in range(0, len(ds), batch_size)]


def load_dataset(dc) -> tuple[Dataset, Dataset]:
    """Train/test pair described by a ``DataConfig``."""
    if dc.source == "mnist":
        train, test = load_mnist(dc.data_dir)
    else:
        rng = np.random.Generator(np.random.PCG64(dc.data_seed))
        full = synth_blobs(dc.n_per_class, dc.classes, dc.dim, dc.spread, rng,
                           center_scale=dc.center_scale, n_informative=dc.n_informative)
        train, test = train_test_split(full, dc.test_fraction, rng)
    if dc.standardize:
        train, test = standardize(train, test)
    return train, test
