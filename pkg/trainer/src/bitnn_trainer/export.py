"""Model export in the engine's binary file format.

Written against the format contract alone; the trainer never imports
the engine. Layout, all little-endian:

    magic "ESPBDNN1", version u32 = 1, layer count u32,
    input dims 3 x u32 (rows, cols, channels), then per layer a tag
    byte, u32 shape fields, and a payload.

Tag 0 (byte-input dense) and tag 1 (dense) carry units and inputLen,
then units * ceil(inputLen/64) u64 words: one packed row per unit,
LSB-first, +1 encoded as 1, padding bits zero. Tag 4 (batchnorm)
carries the channel count, four f32 vectors (mean, var, gamma, beta),
and one f32 epsilon.

The network trains on pixels scaled to [0, 1] while the engine's
first layer consumes raw bytes, so the first batchnorm record absorbs
the factor: mean scales by 255, variance and epsilon by 255^2. That
substitution is exact, not approximate, so the exported function is
the trained one up to float32 parameter rounding.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"ESPBDNN1"
VERSION = 1

TAG_INPUT8 = 0
TAG_DENSE = 1
TAG_BATCHNORM = 4

INPUT_SCALE = 255.0


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a (rows, k) boolean matrix into (rows, ceil(k/64)) uint64 words."""
    rows, k = bits.shape
    wpl = (k + 63) // 64
    padded = np.zeros((rows, wpl * 64), dtype=bool)
    padded[:, :k] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return packed.view("<u8").astype(np.uint64)


def inference_params(state):
    """The exported form of a train state: binary weights and f32 batchnorm.

    Returns (weights, norms) where weights[i] is a float32 +/-1 matrix
    and norms[i] is (mean, var, gamma, beta, eps) at float32 precision
    with the first entry rescaled to the raw byte domain. Evaluation
    and export both start here, so what the trainer scores is exactly
    what the file says.
    """
    weights = [np.where(w >= 0, 1.0, -1.0).astype(np.float32) for w in state.weights]
    norms = []
    for i, bn in enumerate(state.norms):
        mean = bn["mean"].astype(np.float64)
        var = bn["var"].astype(np.float64)
        eps = float(bn["eps"])
        if i == 0:
            mean = mean * INPUT_SCALE
            var = var * INPUT_SCALE**2
            eps = eps * INPUT_SCALE**2
        norms.append((
            mean.astype(np.float32),
            var.astype(np.float32),
            bn["gamma"].astype(np.float32),
            bn["beta"].astype(np.float32),
            float(np.float32(eps)),
        ))
    return weights, norms


def write_model(state) -> bytes:
    weights, norms = inference_params(state)
    rows, cols, channels = state.input_dims
    if rows * cols * channels != state.arch[0]:
        raise ValueError(f"input dims {state.input_dims} do not cover {state.arch[0]} features")
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, 2 * len(weights))
    out += struct.pack("<III", rows, cols, channels)
    for i, (wb, (mean, var, gamma, beta, eps)) in enumerate(zip(weights, norms)):
        units, input_len = wb.shape
        out.append(TAG_INPUT8 if i == 0 else TAG_DENSE)
        out += struct.pack("<II", units, input_len)
        out += pack_rows(wb >= 0).astype("<u8").tobytes()
        out.append(TAG_BATCHNORM)
        out += struct.pack("<I", mean.shape[0])
        for vec in (mean, var, gamma, beta):
            out += vec.astype("<f4").tobytes()
        out += struct.pack("<f", eps)
    return bytes(out)


def export(state, path) -> bytes:
    """Write the state's model file; returns the bytes written."""
    data = write_model(state)
    with open(path, "wb") as fh:
        fh.write(data)
    return data
