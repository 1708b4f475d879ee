"""Binary model file format: reading, writing, structural validation.

Layout, all little-endian:

    magic     8 bytes  "ESPBDNN1"
    version   u32      currently 1
    layers    u32      record count
    inputH    u32      input tensor dims, channels interleaved
    inputW    u32
    inputC    u32
    records   one per layer, in execution order

Each record is a tag byte, a shape header of u32 fields, and a payload:

    tag 0  Input8     units, inputLen; payload units*ceil(inputLen/64)
                      u64 words, row-packed binary weights
    tag 1  Dense      units, inputLen; payload as Input8
    tag 2  Conv       filters, kh, kw, stride, pad, inChannels; payload
                      filters*ceil(kh*kw*inChannels/64) u64 words, one
                      line per filter (column-packed over the window)
    tag 3  MaxPool    ph, pw, stride; no payload
    tag 4  BatchNorm  channels; payload 4 f32 vectors (mean, var,
                      gamma, beta) then one f32 epsilon

Packed weight words are LSB-first with zero padding bits; +1 encodes
to 1, -1 to 0. Sign activations are implicit after every BatchNorm
record except the last. The format is fixed-endian, so files are
portable across platforms byte-for-byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import words_per_line

MAGIC = b"ESPBDNN1"
VERSION = 1

TAG_INPUT8 = 0
TAG_DENSE = 1
TAG_CONV = 2
TAG_MAXPOOL = 3
TAG_BATCHNORM = 4

_TAG_NAMES = {0: "input8", 1: "dense", 2: "conv", 3: "maxpool", 4: "batchnorm"}


class ModelFormatError(ValueError):
    """Structurally unreadable file: bad magic, version, or truncation."""


class ModelValidationError(ValueError):
    """Readable file whose contents are inconsistent."""


@dataclass
class Input8Record:
    units: int
    input_len: int
    words: np.ndarray  # (units, ceil(input_len/64)) uint64

    tag = TAG_INPUT8


@dataclass
class DenseRecord:
    units: int
    input_len: int
    words: np.ndarray

    tag = TAG_DENSE


@dataclass
class ConvRecord:
    filters: int
    kh: int
    kw: int
    stride: int
    pad: int
    in_channels: int
    words: np.ndarray  # (filters, ceil(kh*kw*in_channels/64)) uint64

    tag = TAG_CONV

    @property
    def k(self) -> int:
        return self.kh * self.kw * self.in_channels


@dataclass
class MaxPoolRecord:
    ph: int
    pw: int
    stride: int

    tag = TAG_MAXPOOL


@dataclass
class BatchNormRecord:
    mean: np.ndarray  # all float32, one value per channel
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float

    tag = TAG_BATCHNORM

    def __post_init__(self):
        # the file stores eps at float32 width; quantize up front so an
        # in-memory spec computes the same thresholds as its round trip
        self.eps = float(np.float32(self.eps))

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


@dataclass
class ModelSpec:
    """Parse tree of a model file; the canonical packed representation."""

    input_dims: tuple[int, int, int]
    records: list


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"truncated file: wanted {n} bytes for {what} at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.take(4, what))[0]

    def f32_vec(self, n: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * n, what), dtype="<f4").astype(np.float32)

    def u64_words(self, lines: int, wpl: int, what: str) -> np.ndarray:
        raw = self.take(8 * lines * wpl, what)
        return np.frombuffer(raw, dtype="<u8").reshape(lines, wpl).astype(np.uint64)


def _check_padding(words: np.ndarray, bits: int, index: int):
    tail = bits % 64
    if tail and words.shape[0] and int(words[:, -1].max(initial=0) >> np.uint64(tail)):
        raise ModelValidationError(f"layer {index}: nonzero padding bits in packed weights")


def read_model(data: bytes) -> ModelSpec:
    """Parse model bytes; structural errors name the offending layer."""
    r = _Reader(data)
    magic = r.take(8, "magic")
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}, expected {VERSION}")
    layer_count = r.u32("layer count")
    dims = tuple(r.u32(f"input dim {i}") for i in range(3))
    if min(dims) < 1:
        raise ModelValidationError(f"input dims must be positive, got {dims}")
    records = []
    for i in range(layer_count):
        tag = r.u8(f"layer {i} tag")
        if tag in (TAG_INPUT8, TAG_DENSE):
            units = r.u32(f"layer {i} units")
            input_len = r.u32(f"layer {i} inputLen")
            if units < 1 or input_len < 1:
                raise ModelValidationError(f"layer {i}: bad {_TAG_NAMES[tag]} shape {units}x{input_len}")
            words = r.u64_words(units, words_per_line(input_len), f"layer {i} weights")
            _check_padding(words, input_len, i)
            cls = Input8Record if tag == TAG_INPUT8 else DenseRecord
            records.append(cls(units, input_len, words))
        elif tag == TAG_CONV:
            filters = r.u32(f"layer {i} filters")
            kh = r.u32(f"layer {i} kh")
            kw = r.u32(f"layer {i} kw")
            stride = r.u32(f"layer {i} stride")
            pad = r.u32(f"layer {i} pad")
            in_channels = r.u32(f"layer {i} inChannels")
            if min(filters, kh, kw, stride, in_channels) < 1:
                raise ModelValidationError(f"layer {i}: bad conv shape")
            k = kh * kw * in_channels
            words = r.u64_words(filters, words_per_line(k), f"layer {i} filters")
            _check_padding(words, k, i)
            records.append(ConvRecord(filters, kh, kw, stride, pad, in_channels, words))
        elif tag == TAG_MAXPOOL:
            ph = r.u32(f"layer {i} ph")
            pw = r.u32(f"layer {i} pw")
            stride = r.u32(f"layer {i} stride")
            if min(ph, pw, stride) < 1:
                raise ModelValidationError(f"layer {i}: bad pooling shape")
            records.append(MaxPoolRecord(ph, pw, stride))
        elif tag == TAG_BATCHNORM:
            channels = r.u32(f"layer {i} channels")
            if channels < 1:
                raise ModelValidationError(f"layer {i}: bad channel count")
            vecs = [r.f32_vec(channels, f"layer {i} batchnorm params") for _ in range(4)]
            eps = r.f32(f"layer {i} epsilon")
            if not all(np.all(np.isfinite(v)) for v in vecs) or not np.isfinite(eps):
                raise ModelValidationError(f"layer {i}: non-finite batchnorm parameter")
            if np.any(vecs[1] < 0) or eps < 0 or np.any(vecs[1].astype(np.float64) + eps <= 0):
                raise ModelValidationError(f"layer {i}: batchnorm variance/epsilon out of range")
            records.append(BatchNormRecord(vecs[0], vecs[1], vecs[2], vecs[3], float(eps)))
        else:
            raise ModelFormatError(f"layer {i}: unknown tag {tag}")
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after last record")
    return ModelSpec(dims, records)


def load_model(path) -> ModelSpec:
    with open(path, "rb") as fh:
        return read_model(fh.read())


def write_model(spec: ModelSpec) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(spec.records))
    out += struct.pack("<III", *spec.input_dims)
    for rec in spec.records:
        out.append(rec.tag)
        if rec.tag in (TAG_INPUT8, TAG_DENSE):
            out += struct.pack("<II", rec.units, rec.input_len)
            out += rec.words.astype("<u8").tobytes()
        elif rec.tag == TAG_CONV:
            out += struct.pack("<IIIIII", rec.filters, rec.kh, rec.kw, rec.stride, rec.pad, rec.in_channels)
            out += rec.words.astype("<u8").tobytes()
        elif rec.tag == TAG_MAXPOOL:
            out += struct.pack("<III", rec.ph, rec.pw, rec.stride)
        elif rec.tag == TAG_BATCHNORM:
            out += struct.pack("<I", rec.channels)
            for v in (rec.mean, rec.var, rec.gamma, rec.beta):
                out += v.astype("<f4").tobytes()
            out += struct.pack("<f", rec.eps)
        else:
            raise ModelValidationError(f"cannot serialize record {rec!r}")
    return bytes(out)


def save_model(spec: ModelSpec, path):
    data = write_model(spec)
    with open(path, "wb") as fh:
        fh.write(data)
    return data
