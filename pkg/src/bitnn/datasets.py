"""MNIST IDX and CIFAR-10 binary ingestion.

Both parsers return byte tensors in the engine's interleaved-channel
layout: images are (count, rows, cols, channels) uint8. CIFAR-10 files
store planar RGB, so those are transposed at ingest.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_ROW_BYTES = 1 + 32 * 32 * 3


class DatasetError(ValueError):
    """Malformed or inconsistent dataset files."""


@dataclass
class DatasetSource:
    kind: str  # "mnist-idx" or "cifar10-binary"
    images: np.ndarray  # (count, rows, cols, channels) uint8
    labels: np.ndarray | None  # (count,) uint8, when label files present
    paths: list

    @property
    def count(self) -> int:
        return self.images.shape[0]


def _read(path) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e.strerror}") from e


def _u32be(data: bytes, off: int, path, what: str) -> int:
    if off + 4 > len(data):
        raise DatasetError(f"{path}: truncated {what}")
    return int.from_bytes(data[off:off + 4], "big")


def parse_idx_images(path) -> np.ndarray:
    data = _read(path)
    magic = _u32be(data, 0, path, "header")
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetError(f"{path}: bad IDX image magic {magic:#010x}")
    count = _u32be(data, 4, path, "header")
    rows = _u32be(data, 8, path, "header")
    cols = _u32be(data, 12, path, "header")
    if len(data) - 16 != count * rows * cols:
        raise DatasetError(
            f"{path}: header promises {count}x{rows}x{cols} pixels, "
            f"file holds {len(data) - 16} bytes")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=16)
    return pixels.reshape(count, rows, cols, 1)


def parse_idx_labels(path) -> np.ndarray:
    data = _read(path)
    magic = _u32be(data, 0, path, "header")
    if magic != IDX_LABELS_MAGIC:
        raise DatasetError(f"{path}: bad IDX label magic {magic:#010x}")
    count = _u32be(data, 4, path, "header")
    if len(data) - 8 != count:
        raise DatasetError(f"{path}: header promises {count} labels, "
                           f"file holds {len(data) - 8} bytes")
    return np.frombuffer(data, dtype=np.uint8, offset=8)


def parse_mnist_idx(images_path, labels_path=None) -> DatasetSource:
    images = parse_idx_images(images_path)
    labels = None
    paths = [images_path]
    if labels_path is not None:
        labels = parse_idx_labels(labels_path)
        paths.append(labels_path)
        if labels.shape[0] != images.shape[0]:
            raise DatasetError(
                f"label count {labels.shape[0]} does not match "
                f"image count {images.shape[0]}")
    return DatasetSource("mnist-idx", images, labels, paths)


def parse_cifar10(paths) -> DatasetSource:
    """One or more CIFAR-10 binary batches, planar RGB rows of 3073 bytes."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    if not paths:
        raise DatasetError("no CIFAR-10 batch files given")
    chunks = []
    labels = []
    for path in paths:
        data = _read(path)
        if not data or len(data) % CIFAR_ROW_BYTES:
            raise DatasetError(
                f"{path}: size {len(data)} is not a whole number of "
                f"{CIFAR_ROW_BYTES}-byte rows")
        rows = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_ROW_BYTES)
        labels.append(rows[:, 0].copy())
        planar = rows[:, 1:].reshape(-1, 3, 32, 32)
        chunks.append(np.ascontiguousarray(planar.transpose(0, 2, 3, 1)))
    return DatasetSource("cifar10-binary", np.concatenate(chunks),
                         np.concatenate(labels), list(paths))


_MNIST_PAIRS = [
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ("t10k-images.idx3-ubyte", "t10k-labels.idx1-ubyte"),
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("train-images.idx3-ubyte", "train-labels.idx1-ubyte"),
]


def discover(data_dir) -> DatasetSource:
    """Find a test set under data_dir: MNIST IDX pairs before CIFAR batches."""
    for img_name, lbl_name in _MNIST_PAIRS:
        img = os.path.join(data_dir, img_name)
        if os.path.exists(img):
            lbl = os.path.join(data_dir, lbl_name)
            return parse_mnist_idx(img, lbl if os.path.exists(lbl) else None)
    test = os.path.join(data_dir, "test_batch.bin")
    if os.path.exists(test):
        return parse_cifar10(test)
    batches = sorted(
        os.path.join(data_dir, n) for n in os.listdir(data_dir)
        if n.startswith("data_batch_") and n.endswith(".bin"))
    if batches:
        return parse_cifar10(batches)
    raise DatasetError(f"no MNIST IDX or CIFAR-10 binary files under {data_dir}")
