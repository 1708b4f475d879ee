"""Regenerate the checked-in model fixtures.

Both models carry random (seeded) weights; they exist so the loader,
cross-backend, and CLI tests run against real on-disk files without
any trained artifact. Running this script must reproduce the committed
bytes exactly; test_fixtures.py verifies that.

    python tests/fixtures/generate.py
"""

import os

import numpy as np

from bitnn.gemm import PackedMatrixA
from bitnn.modelfile import (
    BatchNormRecord,
    ConvRecord,
    DenseRecord,
    Input8Record,
    MaxPoolRecord,
    ModelSpec,
    save_model,
)

HERE = os.path.dirname(os.path.abspath(__file__))


def _pack_rows(rng, rows, k):
    mat = np.where(rng.random((rows, k)) < 0.5, -1.0, 1.0).astype(np.float32)
    return PackedMatrixA.from_float(mat).words


def _bn(rng, c, spread):
    return BatchNormRecord(
        (rng.standard_normal(c) * spread).astype(np.float32),
        (rng.random(c) * 50 + 1).astype(np.float32),
        rng.standard_normal(c).astype(np.float32),
        rng.standard_normal(c).astype(np.float32),
        1e-5,
    )


def build_mlp() -> ModelSpec:
    """784 bytes -> 64 -> 10, the smallest full pipeline."""
    rng = np.random.default_rng(0xB17)
    return ModelSpec((1, 1, 784), [
        Input8Record(64, 784, _pack_rows(rng, 64, 784)),
        _bn(rng, 64, 5000.0),
        DenseRecord(10, 64, _pack_rows(rng, 10, 64)),
        _bn(rng, 10, 4.0),
    ])


def build_cnn() -> ModelSpec:
    """32x32x3 input, 2x(32C3) - MP2 - 2x(64C3) - MP2 - FC256 - FC10."""
    rng = np.random.default_rng(0xC99)
    return ModelSpec((32, 32, 3), [
        _bn(rng, 3, 100.0),
        ConvRecord(32, 3, 3, 1, 1, 3, _pack_rows(rng, 32, 27)),
        _bn(rng, 32, 8.0),
        ConvRecord(32, 3, 3, 1, 1, 32, _pack_rows(rng, 32, 288)),
        MaxPoolRecord(2, 2, 2),
        _bn(rng, 32, 30.0),
        ConvRecord(64, 3, 3, 1, 1, 32, _pack_rows(rng, 64, 288)),
        _bn(rng, 64, 30.0),
        ConvRecord(64, 3, 3, 1, 1, 64, _pack_rows(rng, 64, 576)),
        MaxPoolRecord(2, 2, 2),
        _bn(rng, 64, 60.0),
        DenseRecord(256, 4096, _pack_rows(rng, 256, 4096)),
        _bn(rng, 256, 20.0),
        DenseRecord(10, 256, _pack_rows(rng, 10, 256)),
        _bn(rng, 10, 4.0),
    ])


if __name__ == "__main__":
    for name, spec in (("mlp.bdnn", build_mlp()), ("cnn.bdnn", build_cnn())):
        path = os.path.join(HERE, name)
        save_model(spec, path)
        print(f"wrote {path} ({os.path.getsize(path)} bytes)")
