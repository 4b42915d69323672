"""MNIST (IDX) and CIFAR-10 (binary) loaders, resizing and batching.

Both loaders return images scaled to [0, 1] at 32x32; MNIST's 28x28
digits are bilinearly upsampled. Nothing is ever shuffled: subsets are
file-order prefixes and batches are contiguous ranges.
"""

from __future__ import annotations

import gzip
import hashlib
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
NUM_CLASSES = 10
CIFAR_RECORD = 1 + 3 * 32 * 32
DATA_DIR_ENV = "RESFLAT_DATA_DIR"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "validation": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_DIR = "cifar-10-batches-bin"
CIFAR_FILES = {
    "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
    "validation": ("test_batch.bin",),
}


class DataFormatError(ValueError):
    """Raised for malformed dataset files."""


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (K, C, 32, 32) float64 in [0, 1]
    labels: np.ndarray  # (K,) int64 in 0..9
    split: str
    name: str

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    def prefix(self, count: int | None) -> Dataset:
        """First ``count`` examples in file order (all of them if None)."""
        if count is None or count >= len(self):
            return self
        if count < 0:
            raise ValueError("count must be >= 0")
        return Dataset(self.images[:count], self.labels[:count], self.split, self.name)


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _resolve(path: Path) -> Path:
    if path.exists():
        return path
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        return gz
    raise FileNotFoundError(path)


def _check_labels(labels: np.ndarray) -> np.ndarray:
    if labels.size and labels.max() >= NUM_CLASSES:
        bad = int(np.argmax(labels >= NUM_CLASSES))
        raise DataFormatError(f"label {labels[bad]} at index {bad} outside 0..{NUM_CLASSES - 1}")
    return labels.astype(np.int64)


def read_idx_images(path) -> np.ndarray:
    """Raw uint8 images (count, rows, cols) from an IDX3 file."""
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic}, expected {IMAGE_MAGIC}")
    need = count * rows * cols
    if len(raw) - 16 < need:
        raise DataFormatError(f"{path}: truncated, expected {need} pixel bytes, found {len(raw) - 16}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=16).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic}, expected {LABEL_MAGIC}")
    if len(raw) - 8 < count:
        raise DataFormatError(f"{path}: truncated, expected {count} labels, found {len(raw) - 8}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8)


def _interp_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) bilinear weights, half-pixel centres, clamped at the borders."""
    m = np.zeros((dst, src))
    for d in range(dst):
        s = min(max((d + 0.5) * src / dst - 0.5, 0.0), src - 1.0)
        i0 = int(math.floor(s))
        i1 = min(i0 + 1, src - 1)
        t = s - i0
        m[d, i0] += 1.0 - t
        m[d, i1] += t
    return m


def resize_bilinear(images: np.ndarray, size: int = 32) -> np.ndarray:
    """Bilinearly resize (..., h, w) images to (..., size, size).

    Separable: rows then columns, each output pixel a convex combination of
    at most four input pixels.
    """
    images = np.asarray(images, dtype=np.float64)
    h, w = images.shape[-2:]
    ry, rx = _interp_matrix(h, size), _interp_matrix(w, size)
    return ry @ images @ rx.T


def load_mnist(image_path, label_path, split: str = "train", limit: int | None = None) -> Dataset:
    """Load an IDX image/label pair as a 32x32 single-channel Dataset.

    ``limit`` keeps only the first examples (resizing only what is kept).
    """
    imgs = read_idx_images(image_path)
    labels = read_idx_labels(label_path)
    if len(imgs) != len(labels):
        raise DataFormatError(f"count mismatch: {len(imgs)} images vs {len(labels)} labels")
    labels = _check_labels(labels)
    if limit is not None:
        imgs, labels = imgs[:limit], labels[:limit]
    x = resize_bilinear(imgs.astype(np.float64) / 255.0)[:, None, :, :]
    return Dataset(np.ascontiguousarray(x), labels, split, "mnist")


def load_cifar10(batch_paths, split: str = "train", limit: int | None = None) -> Dataset:
    """Concatenate CIFAR-10 binary batch files (3073-byte records) into one Dataset."""
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    chunks = []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DataFormatError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(chunks) if chunks else np.zeros((0, CIFAR_RECORD), np.uint8)
    labels = _check_labels(records[:, 0])
    if limit is not None:
        records, labels = records[:limit], labels[:limit]
    x = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(x, labels, split, "cifar10")


def data_root(root=None) -> Path:
    root = root or os.environ.get(DATA_DIR_ENV)
    if not root:
        raise FileNotFoundError(f"no dataset directory given and ${DATA_DIR_ENV} is unset")
    return Path(root)


def load_dataset(name: str, split: str, root=None, limit: int | None = None) -> Dataset:
    """Load ``mnist`` or ``cifar10`` from the standard file names under ``root``.

    MNIST files are looked up in ``root`` or ``root/mnist``; CIFAR-10 in
    ``root/cifar-10-batches-bin``. Gzipped copies (``.gz``) are accepted.
    """
    root = data_root(root)
    if split not in ("train", "validation"):
        raise ValueError(f"split must be 'train' or 'validation', got {split!r}")
    if name == "mnist":
        for base in (root, root / "mnist"):
            try:
                img, lab = (_resolve(base / f) for f in MNIST_FILES[split])
            except FileNotFoundError:
                continue
            return load_mnist(img, lab, split, limit)
        raise FileNotFoundError(f"MNIST {split} files not found under {root}")
    if name == "cifar10":
        return load_cifar10([_resolve(root / CIFAR_DIR / f) for f in CIFAR_FILES[split]], split, limit)
    raise ValueError(f"unknown dataset {name!r}")


def channels_for(name: str) -> int:
    return {"mnist": 1, "cifar10": 3}[name]


def class_histogram(labels) -> tuple[np.ndarray, float]:
    """Per-class counts and the population standard deviation of those counts."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=NUM_CLASSES)
    return counts, float(np.std(counts))


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    ranges: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.ranges)

    def __iter__(self):
        return iter(self.ranges)


def batches(count: int, batch_size: int) -> BatchPlan:
    """Contiguous ``[start, stop)`` ranges covering 0..count; the last may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return BatchPlan(batch_size, tuple((s, min(s + batch_size, count)) for s in range(0, count, batch_size)))


def checksum(ds: Dataset, start: int = 0, stop: int | None = None) -> str:
    """SHA-256 over the float64 pixels and int64 labels of ``ds[start:stop]``."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.images[start:stop]).tobytes())
    h.update(np.ascontiguousarray(ds.labels[start:stop]).tobytes())
    return h.hexdigest()
