import struct

import numpy as np
import pytest


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.tobytes())


def write_cifar_batch(path, images, labels):
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    recs = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    with open(path, "wb") as f:
        f.write(recs.tobytes())


def fd_grad(f, arr, step=1e-5):
    """Central finite differences of scalar f() w.r.t. every entry of arr."""
    flat = arr.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f()
        flat[i] = old - step
        lo = f()
        flat[i] = old
        out[i] = (hi - lo) / (2 * step)
    return out.reshape(arr.shape)


def max_rel(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def mnist_dir(tmp_path):
    """Tiny MNIST-format tree: 60 train / 20 validation digits with class-dependent blobs."""
    rng = np.random.default_rng(0)
    for prefix, n in (("train", 60), ("t10k", 20)):
        labels = np.arange(n) % 10
        imgs = rng.integers(0, 40, size=(n, 28, 28))
        for i, lab in enumerate(labels):
            imgs[i, 2 + 2 * lab:8 + 2 * lab, 4:24] += 200
        write_idx_images(tmp_path / f"{prefix}-images-idx3-ubyte", np.clip(imgs, 0, 255))
        write_idx_labels(tmp_path / f"{prefix}-labels-idx1-ubyte", labels)
    return tmp_path


@pytest.fixture
def cifar_dir(tmp_path):
    rng = np.random.default_rng(1)
    root = tmp_path / "cifar-10-batches-bin"
    root.mkdir()
    for i in range(1, 6):
        write_cifar_batch(root / f"data_batch_{i}.bin", rng.integers(0, 256, size=(10, 3072)), np.arange(10))
    write_cifar_batch(root / "test_batch.bin", rng.integers(0, 256, size=(10, 3072)), np.arange(10))
    return tmp_path


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
