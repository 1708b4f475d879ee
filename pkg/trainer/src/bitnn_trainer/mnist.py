"""MNIST IDX file reading for the trainer.

IDX headers are big-endian: a u32 magic, then one u32 per dimension.
Image files use magic 0x00000803 with dims (count, rows, cols) and
label files 0x00000801 with (count,). Pixels stay uint8; scaling to
[0, 1] happens in the training loop, not here.
"""

from __future__ import annotations

import os
import struct

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

# canonical distribution names, dash and dot spellings
_TRAIN_NAMES = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("train-images.idx3-ubyte", "train-labels.idx1-ubyte"),
]
_TEST_NAMES = [
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ("t10k-images.idx3-ubyte", "t10k-labels.idx1-ubyte"),
]


class DataError(ValueError):
    """Missing, unreadable, or inconsistent dataset files."""


def _read_idx(path, magic: int, ndim: int, what: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {what} file {path}: {exc}") from None
    head = 4 * (1 + ndim)
    if len(raw) < head:
        raise DataError(f"{what} file {path} truncated in header")
    fields = struct.unpack(f">{1 + ndim}I", raw[:head])
    if fields[0] != magic:
        raise DataError(f"{what} file {path} has magic {fields[0]:#010x}, expected {magic:#010x}")
    shape = fields[1:]
    count = int(np.prod(shape))
    if len(raw) != head + count:
        raise DataError(f"{what} file {path} holds {len(raw) - head} bytes, header promises {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(shape)


def load_images(path) -> np.ndarray:
    """Read an IDX image file as (count, rows, cols) uint8."""
    return _read_idx(path, IMAGES_MAGIC, 3, "images")


def load_labels(path) -> np.ndarray:
    return _read_idx(path, LABELS_MAGIC, 1, "labels")


def load_pair(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    images = load_images(images_path)
    labels = load_labels(labels_path)
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images but {len(labels)} labels")
    return images, labels


def _find_pair(data_dir, names, split: str):
    for img_name, lbl_name in names:
        img = os.path.join(data_dir, img_name)
        lbl = os.path.join(data_dir, lbl_name)
        if os.path.exists(img) and os.path.exists(lbl):
            return img, lbl
    raise DataError(f"no MNIST {split} files under {data_dir}")


def load_mnist(data_dir):
    """Load the train and test splits from a directory of IDX files.

    Returns (train_images, train_labels, test_images, test_labels).
    """
    train = load_pair(*_find_pair(data_dir, _TRAIN_NAMES, "training"))
    test = load_pair(*_find_pair(data_dir, _TEST_NAMES, "test"))
    return train[0], train[1], test[0], test[1]
