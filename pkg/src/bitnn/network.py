"""Network loading, the end-to-end forward pass, and backend conversion.

A network is compiled at load time into a flat list of stages with
every intermediate buffer preallocated in a Workspace, so a forward
pass performs no dynamic allocation: each stage reads the previous
stage's buffer (wired at compile time) and writes its own.

Two backends compute the same function:

  * packed: weights stay bit-packed, dot products run on XOR/popcount
    kernels, batchnorm + sign pairs become integer threshold compares;
  * reference: weights unpacked to +/-1 float32, products through BLAS,
    batchnorm in float64 followed by an explicit sign.

Both accumulate exact integers (float32 sums of integers below 2^24
are exact), and batchnorm runs in float64 on both sides, so reference
and packed scores are not merely close, they are bit-identical. A
per-layer backend mix (hybrid) is also supported; pack/unpack adapters
bridge representations between stages.
"""

from __future__ import annotations

import enum

import numpy as np

from . import _kernels
from .gemm import MAX_K
from .layers import BatchNormLayer, compute_correction
from .modelfile import (
    BatchNormRecord,
    ConvRecord,
    DenseRecord,
    Input8Record,
    MaxPoolRecord,
    ModelSpec,
    ModelValidationError,
    load_model,
    write_model,
)
from .tensor import words_per_line


class Backend(enum.Enum):
    REFERENCE = "reference"
    PACKED = "packed"


class Workspace:
    """All buffers a network's forward pass will ever touch."""

    def __init__(self):
        self.buffers: list[np.ndarray] = []

    def alloc(self, shape, dtype) -> np.ndarray:
        buf = np.zeros(shape, dtype=dtype)
        self.buffers.append(buf)
        return buf

    @property
    def total_bytes(self) -> int:
        return sum(b.nbytes for b in self.buffers)

    def owns(self, arr: np.ndarray) -> bool:
        return any(np.shares_memory(arr, b) for b in self.buffers)


def _unpack_words(words: np.ndarray, bits: int) -> np.ndarray:
    out = np.empty((words.shape[0], bits), dtype=np.float32)
    _kernels.unpack_lines(words, bits, out)
    return out


# ---------------------------------------------------------------------------
# stages: each instance owns its output buffer and is wired to its
# producer's buffer at compile time; run() takes the network input only
# so byte-input stages can see it.


class _PackedInput8:
    def __init__(self, ws, rec: Input8Record):
        self.words = rec.words
        self.k = rec.input_len
        self.planes = ws.alloc((8, words_per_line(rec.input_len)), np.uint64)
        self.pops = ws.alloc(8, np.int64)
        self.out = ws.alloc(rec.units, np.int64)

    def run(self, x):
        _kernels.pack_byte_planes(x.reshape(1, -1), self.planes.reshape(8, 1, -1))
        _kernels.count_plane_bits(self.planes, self.pops)
        _kernels.bitplane_matvec(self.planes, self.pops, self.words, self.out)
        return self.out


class _RefInput8:
    def __init__(self, ws, rec: Input8Record):
        self.wf = _unpack_words(rec.words, rec.input_len)
        self.xf = ws.alloc(rec.input_len, np.float32)
        self.out = ws.alloc(rec.units, np.float32)

    def run(self, x):
        _kernels.copy_cast(x.reshape(-1), self.xf)
        np.matmul(self.wf, self.xf, out=self.out)
        return self.out


def _bn_line_plan(bn: BatchNormLayer, dims, flat: bool):
    """Line layout and (possibly broadcast) thresholds for a packed
    batchnorm + sign stage.

    Multi-channel tensors pack one line per site; single-channel
    spatial tensors pack column-axis (one line per row), which the
    threshold kernel covers by viewing rows as c-wide sites with the
    channel-0 threshold repeated. flat packs everything as one line.
    """
    h, w, c = dims
    sites = h * w
    if flat or sites == 1:
        return (sites, c), bn.thresh, bn.ge_dir, True, (1, h * w * c)
    if c == 1:
        thresh = np.full(w, bn.thresh[0], dtype=np.int64)
        ge_dir = np.full(w, bn.ge_dir[0], dtype=np.bool_)
        return (h, w), thresh, ge_dir, False, (h, w)
    return (sites, c), bn.thresh, bn.ge_dir, False, (sites, c)


class _PackedByteBN:
    """First-layer batchnorm + sign straight on raw bytes."""

    def __init__(self, ws, bn: BatchNormLayer, dims, flat: bool):
        self.view_shape, self.thresh, self.ge_dir, self.flat, (n_lines, bits) = _bn_line_plan(bn, dims, flat)
        self.out = ws.alloc((n_lines, words_per_line(bits)), np.uint64)

    def run(self, x):
        _kernels.threshold_sign_pack(x.reshape(self.view_shape), self.thresh, self.ge_dir,
                                     self.flat, self.out)
        return self.out


class _RefByteBN:
    def __init__(self, ws, bn: BatchNormLayer, dims):
        self.bn = bn
        self.out = ws.alloc(dims, np.float32)
        self.out_flat = self.out.reshape(-1)

    def run(self, x):
        _kernels.bn_affine_sign(x.reshape(-1), self.bn.mean64, self.bn.scale64,
                                self.bn.beta64, self.out_flat)
        return self.out


class _PackedDense:
    def __init__(self, ws, rec: DenseRecord, src: np.ndarray):
        self.words = rec.words
        self.k = rec.input_len
        self.x = src[0]
        self.out = ws.alloc(rec.units, np.int32)

    def run(self, x):
        _kernels.bgemv_packed(self.words, self.x, self.k, self.out)
        return self.out


class _RefDense:
    def __init__(self, ws, rec: DenseRecord, src: np.ndarray):
        self.wf = _unpack_words(rec.words, rec.input_len)
        self.x = src.reshape(-1)
        self.out = ws.alloc(rec.units, np.float32)

    def run(self, x):
        np.matmul(self.wf, self.x, out=self.out)
        return self.out


class _PackedConv:
    def __init__(self, ws, rec: ConvRecord, in_shape, src: np.ndarray):
        h, w, c = in_shape
        self.src = src
        self.h, self.w, self.c = h, w, c
        self.axis_channel = c > 1
        self.kh, self.kw, self.stride, self.pad = rec.kh, rec.kw, rec.stride, rec.pad
        self.words = rec.words
        self.k = rec.k
        h_out = (h + 2 * rec.pad - rec.kh) // rec.stride + 1
        w_out = (w + 2 * rec.pad - rec.kw) // rec.stride + 1
        self.unrolled = ws.alloc((h_out * w_out, words_per_line(rec.k)), np.uint64)
        self.acc = ws.alloc((h_out * w_out, rec.filters), np.int32)
        self.out = self.acc.reshape(h_out, w_out, rec.filters)  # zero-copy lifting
        self.correction = compute_correction(_unpack_words(rec.words, rec.k).T, in_shape,
                                             (rec.kh, rec.kw), rec.stride, rec.pad)

    def run(self, x):
        _kernels.unroll_packed(self.src, self.h, self.w, self.c, self.axis_channel,
                               self.kh, self.kw, self.stride, self.pad, self.unrolled)
        _kernels.bgemm_packed(self.unrolled, self.words, self.k, self.acc)
        self.acc += self.correction
        return self.out


class _RefConv:
    def __init__(self, ws, rec: ConvRecord, in_shape, src: np.ndarray):
        h, w, c = in_shape
        self.src = src.reshape(in_shape)
        self.kh, self.kw, self.stride, self.pad = rec.kh, rec.kw, rec.stride, rec.pad
        self.wf = _unpack_words(rec.words, rec.k).T.copy()  # (K, F)
        h_out = (h + 2 * rec.pad - rec.kh) // rec.stride + 1
        w_out = (w + 2 * rec.pad - rec.kw) // rec.stride + 1
        self.unrolled = ws.alloc((h_out * w_out, rec.k), np.float32)
        self.acc = ws.alloc((h_out * w_out, rec.filters), np.float32)
        self.out = self.acc.reshape(h_out, w_out, rec.filters)

    def run(self, x):
        _kernels.unroll_float(self.src, self.kh, self.kw, self.stride, self.pad, self.unrolled)
        np.matmul(self.unrolled, self.wf, out=self.acc)
        return self.out


class _Pool:
    def __init__(self, ws, rec: MaxPoolRecord, in_shape, src: np.ndarray, dtype):
        h, w, c = in_shape
        self.src = src
        self.ph, self.pw, self.stride = rec.ph, rec.pw, rec.stride
        h_out = (h - rec.ph) // rec.stride + 1
        w_out = (w - rec.pw) // rec.stride + 1
        self.out = ws.alloc((h_out, w_out, c), dtype)

    def run(self, x):
        _kernels.maxpool(self.src, self.ph, self.pw, self.stride, self.out)
        return self.out


class _PackedBN:
    """Fused batchnorm + sign + pack on integer accumulators."""

    def __init__(self, ws, bn: BatchNormLayer, in_shape, src: np.ndarray, flat: bool):
        view_shape, self.thresh, self.ge_dir, self.flat, (n_lines, bits) = _bn_line_plan(bn, in_shape, flat)
        self.src = src.reshape(view_shape)
        self.out = ws.alloc((n_lines, words_per_line(bits)), np.uint64)

    def run(self, x):
        _kernels.threshold_sign_pack(self.src, self.thresh, self.ge_dir, self.flat, self.out)
        return self.out


class _RefBN:
    def __init__(self, ws, bn: BatchNormLayer, in_shape, src: np.ndarray):
        self.bn = bn
        self.src_flat = src.reshape(-1)
        self.out = ws.alloc(in_shape, np.float32)
        self.out_flat = self.out.reshape(-1)

    def run(self, x):
        _kernels.bn_affine_sign(self.src_flat, self.bn.mean64, self.bn.scale64,
                                self.bn.beta64, self.out_flat)
        return self.out


class _FinalBN:
    """Last batchnorm: emits float64 scores, no sign."""

    def __init__(self, ws, bn: BatchNormLayer, src: np.ndarray):
        self.bn = bn
        self.src_flat = src.reshape(-1)
        self.out = ws.alloc(bn.channels, np.float64)

    def run(self, x):
        _kernels.bn_affine(self.src_flat, self.bn.mean64, self.bn.scale64,
                           self.bn.beta64, self.out)
        return self.out


class _PackAdapter:
    """+/-1 float activation -> packed words (line layout fixed at build)."""

    def __init__(self, ws, src: np.ndarray, n_lines: int, bits: int):
        self.src = src.reshape(n_lines, bits)
        self.out = ws.alloc((n_lines, words_per_line(bits)), np.uint64)

    def run(self, x):
        _kernels.pack_lines(self.src, self.out)
        return self.out


class _UnpackAdapter:
    """Packed words -> +/-1 float activation."""

    def __init__(self, ws, src: np.ndarray, n_lines: int, bits: int, out_shape):
        self.src = src
        self.bits = bits
        self.buf = ws.alloc((n_lines, bits), np.float32)
        self.out = self.buf.reshape(out_shape)

    def run(self, x):
        _kernels.unpack_lines(self.src, self.bits, self.buf)
        return self.out


# ---------------------------------------------------------------------------


class Network:
    """A loaded model compiled for one backend (or a per-layer mix).

    Immutable after construction; a forward pass writes only into this
    instance's workspace, so concurrent forward calls need one Network
    (or at least one workspace clone via convert) per thread.
    """

    def __init__(self, spec: ModelSpec, backend: Backend = Backend.PACKED, layer_backends=None):
        if isinstance(backend, str):
            backend = Backend(backend)
        self.spec = spec
        self.input_dims = spec.input_dims
        self.workspace = Workspace()
        n_compute = sum(1 for r in spec.records if isinstance(r, (Input8Record, DenseRecord, ConvRecord)))
        if layer_backends is None:
            assigned = [backend] * n_compute
        else:
            assigned = [Backend(b) if isinstance(b, str) else b for b in layer_backends]
            if len(assigned) != n_compute:
                raise ModelValidationError(
                    f"layer_backends needs one entry per weight layer ({n_compute}), got {len(assigned)}")
        self.backend = backend if all(b == backend for b in assigned) else "hybrid"
        self.layer_backends = assigned
        self.stages = []
        self.classes = self._compile(assigned)

    # -- compilation ------------------------------------------------------

    def _compile(self, assigned) -> int:
        recs = self.spec.records
        if not recs:
            raise ModelValidationError("model has no layers")
        if not isinstance(recs[-1], BatchNormRecord):
            raise ModelValidationError(f"layer {len(recs) - 1}: model must end with a batchnorm score layer")
        ws = self.workspace
        bn_layers = {}
        for i, r in enumerate(recs):
            if isinstance(r, BatchNormRecord):
                bn_layers[i] = BatchNormLayer(r.mean, r.var, r.gamma, r.beta, r.eps)

        compute_iter = iter(assigned)
        cur = None          # producer buffer
        rep = "bytes"       # bytes | packed | float | acc | scores
        shape = self.input_dims
        acc_backend = None  # backend that produced the current accumulator

        def next_consumer(i):
            return recs[i + 1] if i + 1 < len(recs) else None

        def want_flat(i):
            return isinstance(next_consumer(i), (DenseRecord, Input8Record))

        def to_packed(i, n_lines, bits):
            nonlocal cur, rep
            if rep == "float":
                st = _PackAdapter(ws, cur, n_lines, bits)
                self.stages.append(st)
                cur, rep = st.out, "packed"

        def to_float(i, n_lines, bits, out_shape):
            nonlocal cur, rep
            if rep == "packed":
                st = _UnpackAdapter(ws, cur, n_lines, bits, out_shape)
                self.stages.append(st)
                cur, rep = st.out, "float"

        for i, rec in enumerate(recs):
            last = i == len(recs) - 1
            if isinstance(rec, Input8Record):
                if i != 0:
                    raise ModelValidationError(f"layer {i}: input8 is only valid as the first layer")
                h, w, c = shape
                if rec.input_len != h * w * c:
                    raise ModelValidationError(
                        f"layer {i}: input8 expects {rec.input_len} bytes but input dims give {h * w * c}")
                b = next(compute_iter)
                st = _PackedInput8(ws, rec) if b == Backend.PACKED else _RefInput8(ws, rec)
                self.stages.append(st)
                cur, rep, shape, acc_backend = st.out, "acc", (1, 1, rec.units), b
            elif isinstance(rec, DenseRecord):
                if rep not in ("packed", "float"):
                    raise ModelValidationError(f"layer {i}: dense layer needs a signed activation input")
                h, w, c = shape
                if rec.input_len != h * w * c:
                    raise ModelValidationError(
                        f"layer {i}: dense expects {rec.input_len} inputs, previous layer gives {h * w * c}")
                if h * w != 1 and rep == "packed":
                    raise ModelValidationError(f"layer {i}: dense needs a flat activation line")
                b = next(compute_iter)
                if b == Backend.PACKED:
                    to_packed(i, 1, rec.input_len)
                    st = _PackedDense(ws, rec, cur)
                else:
                    to_float(i, 1, rec.input_len, (rec.input_len,))
                    st = _RefDense(ws, rec, cur)
                self.stages.append(st)
                cur, rep, shape, acc_backend = st.out, "acc", (1, 1, rec.units), b
            elif isinstance(rec, ConvRecord):
                if rep not in ("packed", "float") or shape[0] * shape[1] == 1:
                    raise ModelValidationError(f"layer {i}: conv needs a spatial signed activation input")
                h, w, c = shape
                if c != rec.in_channels:
                    raise ModelValidationError(
                        f"layer {i}: conv expects {rec.in_channels} channels, previous layer gives {c}")
                if h + 2 * rec.pad < rec.kh or w + 2 * rec.pad < rec.kw:
                    raise ModelValidationError(f"layer {i}: kernel {rec.kh}x{rec.kw} larger than padded input")
                if rec.k > MAX_K:
                    raise ModelValidationError(f"layer {i}: dot length {rec.k} over limit {MAX_K}")
                b = next(compute_iter)
                n_lines, bits = (h * w, c) if c > 1 else (h, w)
                if b == Backend.PACKED:
                    to_packed(i, n_lines, bits)
                    st = _PackedConv(ws, rec, shape, cur)
                else:
                    to_float(i, n_lines, bits, shape)
                    st = _RefConv(ws, rec, shape, cur)
                self.stages.append(st)
                h_out = (h + 2 * rec.pad - rec.kh) // rec.stride + 1
                w_out = (w + 2 * rec.pad - rec.kw) // rec.stride + 1
                cur, rep, shape, acc_backend = st.out, "acc", (h_out, w_out, rec.filters), b
            elif isinstance(rec, MaxPoolRecord):
                if rep != "acc" or shape[0] * shape[1] == 1:
                    raise ModelValidationError(f"layer {i}: maxpool needs spatial integer accumulators")
                h, w, c = shape
                if h < rec.ph or w < rec.pw:
                    raise ModelValidationError(f"layer {i}: pooling window {rec.ph}x{rec.pw} larger than {h}x{w}")
                st = _Pool(ws, rec, shape, cur, cur.dtype)
                self.stages.append(st)
                cur, shape = st.out, st.out.shape
            elif isinstance(rec, BatchNormRecord):
                bn = bn_layers[i]
                if i == 0:
                    # byte-threshold input layer
                    h, w, c = shape
                    if bn.channels != c:
                        raise ModelValidationError(
                            f"layer {i}: batchnorm has {bn.channels} channels, input has {c}")
                    if last:
                        raise ModelValidationError("layer 0: model cannot be a lone batchnorm")
                    flat = want_flat(i)
                    b = self.layer_backends[0] if self.layer_backends else Backend.PACKED
                    if b == Backend.PACKED:
                        st = _PackedByteBN(ws, bn, shape, flat)
                        self.stages.append(st)
                        cur, rep = st.out, "packed"
                    else:
                        st = _RefByteBN(ws, bn, shape)
                        self.stages.append(st)
                        cur, rep = st.out, "float"
                    if flat:
                        shape = (1, 1, h * w * c)
                    continue
                if rep != "acc":
                    raise ModelValidationError(f"layer {i}: batchnorm needs accumulator input")
                if bn.channels != shape[2]:
                    raise ModelValidationError(
                        f"layer {i}: batchnorm has {bn.channels} channels, previous layer gives {shape[2]}")
                if last:
                    if shape[0] * shape[1] != 1:
                        raise ModelValidationError(f"layer {i}: final batchnorm must see a flat score vector")
                    st = _FinalBN(ws, bn, cur)
                    self.stages.append(st)
                    cur, rep = st.out, "scores"
                    continue
                nxt = next_consumer(i)
                if not isinstance(nxt, (DenseRecord, ConvRecord)):
                    raise ModelValidationError(f"layer {i}: batchnorm output has no consumer layer")
                flat = want_flat(i)
                if acc_backend == Backend.PACKED:
                    st = _PackedBN(ws, bn, shape, cur, flat)
                    self.stages.append(st)
                    cur, rep = st.out, "packed"
                else:
                    st = _RefBN(ws, bn, shape, cur)
                    self.stages.append(st)
                    cur, rep = st.out, "float"
                if flat:
                    shape = (1, 1, shape[0] * shape[1] * shape[2])
            else:
                raise ModelValidationError(f"layer {i}: unknown record {rec!r}")
        if rep != "scores":
            raise ModelValidationError("model does not end in a score-emitting batchnorm")
        self._scores = cur
        return cur.shape[0]

    # -- representation helpers for convert/serialize ---------------------

    def float_weights(self) -> list[np.ndarray]:
        """Reference-style float weight matrices, one per weight layer."""
        out = []
        for rec in self.spec.records:
            if isinstance(rec, (Input8Record, DenseRecord)):
                out.append(_unpack_words(rec.words, rec.input_len))
            elif isinstance(rec, ConvRecord):
                out.append(_unpack_words(rec.words, rec.k).T.copy())
        return out


def load(path, backend: Backend = Backend.PACKED, layer_backends=None) -> Network:
    """Read, validate, and compile a model file."""
    return Network(load_model(path), backend, layer_backends)


def forward(net: Network, image: np.ndarray) -> np.ndarray:
    """Run one input through the network; returns the score vector.

    The scores live in the network's workspace and are overwritten by
    the next forward call; copy them if they must outlive it.
    """
    x = np.asarray(image)
    if x.dtype != np.uint8:
        raise ValueError(f"expected uint8 input, got {x.dtype}")
    h, w, c = net.input_dims
    if x.shape != (h, w, c) and x.shape != (h * w * c,):
        raise ValueError(f"expected input shape {(h, w, c)} or ({h * w * c},), got {x.shape}")
    if not x.flags.c_contiguous:
        raise ValueError("input must be C-contiguous")
    for stage in net.stages:
        x = stage.run(x)
    return x


def classify(net: Network, image: np.ndarray) -> int:
    """Argmax of forward; ties break to the lowest class index."""
    return int(np.argmax(forward(net, image)))


def convert(net: Network, target: Backend) -> Network:
    """Re-host a network on the other backend.

    Reference -> packed binarizes the float weights through the sign
    rule; packed -> reference unpacks bits to +/-1 floats. Converting
    to the current backend returns an equal, independent network.
    """
    if isinstance(target, str):
        target = Backend(target)
    if net.backend == Backend.REFERENCE and target == Backend.PACKED:
        recs = []
        floats = iter(net.float_weights())
        for rec in net.spec.records:
            if isinstance(rec, (Input8Record, DenseRecord)):
                words = np.zeros_like(rec.words)
                _kernels.pack_lines(next(floats), words)
                recs.append(type(rec)(rec.units, rec.input_len, words))
            elif isinstance(rec, ConvRecord):
                words = np.zeros_like(rec.words)
                _kernels.pack_lines(np.ascontiguousarray(next(floats).T), words)
                recs.append(ConvRecord(rec.filters, rec.kh, rec.kw, rec.stride, rec.pad,
                                       rec.in_channels, words))
            else:
                recs.append(rec)
        return Network(ModelSpec(net.spec.input_dims, recs), Backend.PACKED)
    return Network(net.spec, target)


def serialize(net: Network) -> bytes:
    return write_model(net.spec)


def model_size(obj) -> dict:
    """Serialized parameter bytes per backend, headers excluded.

    reference counts binary weights at float32 width; packed counts
    them at one bit each padded to whole words per line. Batchnorm
    parameters are float32 on both backends.
    """
    spec = obj.spec if isinstance(obj, Network) else obj
    packed_w = 0
    ref_w = 0
    bn = 0
    for rec in spec.records:
        if isinstance(rec, (Input8Record, DenseRecord)):
            packed_w += rec.words.nbytes
            ref_w += 4 * rec.units * rec.input_len
        elif isinstance(rec, ConvRecord):
            packed_w += rec.words.nbytes
            ref_w += 4 * rec.filters * rec.k
        elif isinstance(rec, BatchNormRecord):
            bn += 4 * (4 * rec.channels + 1)
    return {
        "reference": ref_w + bn,
        "packed": packed_w + bn,
        "reference_weights": ref_w,
        "packed_weights": packed_w,
        "batchnorm_bytes": bn,
    }
