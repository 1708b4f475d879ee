"""Layer types and forward operations, reference and packed flavors.

Convolutions run as matrix products: the input is unrolled so row r
holds the receptive field of output position r (flattened dy, dx,
channel with channel fastest), multiplied against column-packed
filters, and the (positions x F) product is already the output tensor
in interleaved-channel layout, so lifting back to H_out x W_out x F is
a reshape with no data movement.

Padding sites in the unrolled matrix are 0-bits, which the binary dot
reads as -1 rather than 0. A per-position correction map, precomputed
at load, adds back the sum of the filter weights over the padding
cells under each window, which converts pad-as-(-1) results into true
zero-padded convolution results.

Batchnorm + sign pairs collapse into per-channel integer threshold
comparisons, calibrated at load against the float64 batchnorm formula
so the fused path is bit-identical to the unfused one.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .gemm import PackedMatrixA, PackedMatrixB, bgemm, bgemv, bitplane_gemv
from .tensor import Axis, FloatTensor, PackedTensor, pack, words_per_line

# Threshold sentinels for channels whose sign never depends on x
# (gamma == 0). Far outside any reachable accumulator value.
ALWAYS = -(1 << 62)
NEVER = 1 << 62

# Integer activations are bounded by 255 * MAX_K < 2^40, so a binary
# search over this range always brackets the sign flip.
_SEARCH_BOUND = 1 << 40

DEFAULT_EPS = 1e-5


class Input8Layer:
    """Dense layer applied straight to byte inputs via bit planes."""

    def __init__(self, weights: PackedMatrixA):
        self.weights = weights
        self.units = weights.rows
        self.input_len = weights.k


class DenseLayer:
    def __init__(self, weights: PackedMatrixA):
        self.weights = weights
        self.units = weights.rows
        self.input_len = weights.k


class ConvLayer:
    """2-D binary convolution; filters column-packed over kh*kw*C_in.

    in_shape is fixed at load time so the padding correction map can be
    precomputed once.
    """

    def __init__(self, weights: PackedMatrixB, kernel: tuple[int, int], stride: int, pad: int,
                 in_shape: tuple[int, int, int]):
        kh, kw = kernel
        h, w, c = in_shape
        if weights.k != kh * kw * c:
            raise ValueError(f"filter matrix has K={weights.k}, expected kh*kw*C = {kh * kw * c}")
        if stride < 1 or pad < 0:
            raise ValueError(f"bad stride/pad: {stride}, {pad}")
        if h + 2 * pad < kh or w + 2 * pad < kw:
            raise ValueError(f"kernel {kernel} larger than padded input {in_shape} + pad {pad}")
        self.weights = weights
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        self.in_shape = in_shape
        self.filters = weights.cols
        h_out = (h + 2 * pad - kh) // stride + 1
        w_out = (w + 2 * pad - kw) // stride + 1
        self.out_shape = (h_out, w_out, self.filters)
        self.correction = compute_correction(self.weights_float(), in_shape, kernel, stride, pad)

    def weights_float(self) -> np.ndarray:
        """Unpack the filters to a (kh*kw*C_in, F) +/-1 float matrix."""
        cols = np.empty((self.weights.cols, self.weights.k), dtype=np.float32)
        _kernels.unpack_lines(self.weights.words, self.weights.k, cols)
        return cols.T.copy()

    @classmethod
    def from_float(cls, w: np.ndarray, kernel, stride, pad, in_shape) -> "ConvLayer":
        return cls(PackedMatrixB.from_float(w), kernel, stride, pad, in_shape)


class MaxPoolLayer:
    def __init__(self, window: tuple[int, int], stride: int):
        if stride < 1 or min(window) < 1:
            raise ValueError(f"bad pooling window/stride: {window}, {stride}")
        self.window = window
        self.stride = stride

    def out_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        h, w, c = in_shape
        ph, pw = self.window
        if h < ph or w < pw:
            raise ValueError(f"pooling window {self.window} larger than input {in_shape}")
        return ((h - ph) // self.stride + 1, (w - pw) // self.stride + 1, c)


class BatchNormLayer:
    """Inference-time affine normalization, per channel.

    Parameters are stored as given (float32 in model files) but all
    arithmetic runs in float64, which is what makes the fused integer
    thresholds below reproducible against the unfused path.
    """

    def __init__(self, mean, var, gamma, beta, eps: float = DEFAULT_EPS):
        mean, var, gamma, beta = (np.atleast_1d(np.asarray(v, dtype=np.float32)) for v in (mean, var, gamma, beta))
        if not (mean.shape == var.shape == gamma.shape == beta.shape) or mean.ndim != 1:
            raise ValueError("batchnorm parameter vectors must share one length")
        if np.any(var < 0):
            raise ValueError("negative variance")
        if eps < 0:
            raise ValueError("negative epsilon")
        if np.any(var.astype(np.float64) + eps <= 0):
            raise ValueError("variance + epsilon must be positive")
        if not all(np.all(np.isfinite(v)) for v in (mean, var, gamma, beta)):
            raise ValueError("non-finite batchnorm parameter")
        self.mean = mean
        self.var = var
        self.gamma = gamma
        self.beta = beta
        self.eps = float(eps)
        self.channels = mean.shape[0]
        # float64 working form: y = (x - mean) * scale + beta
        self.mean64 = mean.astype(np.float64)
        self.beta64 = beta.astype(np.float64)
        self.scale64 = gamma.astype(np.float64) / np.sqrt(var.astype(np.float64) + self.eps)
        self.thresh, self.ge_dir = self._calibrate()

    def _bn(self, x: float, c: int) -> float:
        return (x - self.mean64[c]) * self.scale64[c] + self.beta64[c]

    def _calibrate(self):
        """Integer thresholds reproducing sign(batchnorm(x)) exactly.

        For scale > 0 the map is nondecreasing in x, so binary search
        finds the smallest integer with bn(x) >= 0 and the bit rule is
        x >= thresh. Negative scale flips the direction to x <= thresh;
        zero scale pins the bit to sign(beta) via sentinels.
        """
        thresh = np.empty(self.channels, dtype=np.int64)
        ge_dir = np.empty(self.channels, dtype=np.bool_)
        for c in range(self.channels):
            s = self.scale64[c]
            if s == 0.0:
                thresh[c] = ALWAYS if self.beta64[c] >= 0 else NEVER
                ge_dir[c] = True
                continue
            lo, hi = -_SEARCH_BOUND, _SEARCH_BOUND
            if s > 0:
                ge_dir[c] = True
                if self._bn(lo, c) >= 0:
                    thresh[c] = ALWAYS
                elif self._bn(hi, c) < 0:
                    thresh[c] = NEVER
                else:
                    while hi - lo > 1:
                        mid = (lo + hi) // 2
                        if self._bn(mid, c) >= 0:
                            hi = mid
                        else:
                            lo = mid
                    thresh[c] = hi
            else:
                ge_dir[c] = False
                if self._bn(hi, c) >= 0:
                    thresh[c] = NEVER  # x <= NEVER: always true in range
                elif self._bn(lo, c) < 0:
                    thresh[c] = ALWAYS  # x <= ALWAYS: never true
                else:
                    while hi - lo > 1:
                        mid = (lo + hi) // 2
                        if self._bn(mid, c) >= 0:
                            lo = mid
                        else:
                            hi = mid
                    thresh[c] = lo
        return thresh, ge_dir


def input8_forward(layer: Input8Layer, data: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """y[u] = integer dot of the byte vector with weight row u, exact."""
    data = np.ascontiguousarray(data, dtype=np.uint8).reshape(-1)
    if data.shape[0] != layer.input_len:
        raise ValueError(f"expected {layer.input_len} input bytes, got {data.shape[0]}")
    planes = np.zeros((8, 1, words_per_line(layer.input_len)), dtype=np.uint64)
    _kernels.pack_byte_planes(data.reshape(1, -1), planes)
    return bitplane_gemv(planes[:, 0, :], layer.weights, out=out)


def dense_forward(layer: DenseLayer, a: PackedTensor, out: np.ndarray | None = None) -> np.ndarray:
    if a.n_lines != 1 or a.bits_per_line != layer.input_len:
        raise ValueError(f"dense layer wants one {layer.input_len}-bit line, got {a.n_lines} x {a.bits_per_line}")
    return bgemv(layer.weights, a.words[0], out=out)


def unroll(a: PackedTensor, kernel: tuple[int, int], stride: int, pad: int) -> PackedMatrixA:
    """im2col: one packed row per output position, channel fastest."""
    h, w, c = a.dims
    kh, kw = kernel
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ValueError(f"kernel {kernel} larger than padded input {a.dims} + pad {pad}")
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (w + 2 * pad - kw) // stride + 1
    k = kh * kw * c
    out = np.zeros((h_out * w_out, words_per_line(k)), dtype=np.uint64)
    _kernels.unroll_packed(a.words, h, w, c, a.axis is Axis.CHANNEL, kh, kw, stride, pad, out)
    return PackedMatrixA(h_out * w_out, k, out)


def compute_correction(weights: np.ndarray, in_shape: tuple[int, int, int], kernel: tuple[int, int],
                       stride: int, pad: int) -> np.ndarray:
    """Padding repair map: correction[pos, f] = sum of filter f's
    weights over the window cells that fall in the padding ring.

    Equivalent to convolving each filter over a tensor that is 0 inside
    and +1 on the ring. Zero everywhere when pad == 0.
    """
    h, w, c = in_shape
    kh, kw = kernel
    wi = np.rint(np.asarray(weights, dtype=np.float64)).astype(np.int32)
    if wi.shape[0] != kh * kw * c:
        raise ValueError(f"weights rows {wi.shape[0]} != kh*kw*C {kh * kw * c}")
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (w + 2 * pad - kw) // stride + 1
    corr = np.zeros((h_out * w_out, wi.shape[1]), dtype=np.int32)
    if pad == 0:
        return corr
    for i in range(h_out):
        for j in range(w_out):
            row = corr[i * w_out + j]
            for dy in range(kh):
                ii = i * stride + dy - pad
                for dx in range(kw):
                    jj = j * stride + dx - pad
                    if ii < 0 or ii >= h or jj < 0 or jj >= w:
                        base = (dy * kw + dx) * c
                        row += wi[base:base + c].sum(axis=0)
    return corr


def conv_forward(layer: ConvLayer, a: PackedTensor) -> np.ndarray:
    """Zero-padded binary convolution, exact in int32.

    The returned (H_out, W_out, F) tensor is a reshape of the GEMM
    output buffer: interleaved-channel layout makes lifting free.
    """
    if a.dims != layer.in_shape:
        raise ValueError(f"expected input dims {layer.in_shape}, got {a.dims}")
    unrolled = unroll(a, layer.kernel, layer.stride, layer.pad)
    acc = bgemm(unrolled, layer.weights)
    acc += layer.correction
    return acc.reshape(layer.out_shape)


def maxpool_forward(x: np.ndarray, window: tuple[int, int], stride: int,
                    out: np.ndarray | None = None) -> np.ndarray:
    if x.ndim != 3:
        raise ValueError(f"expected (H, W, C) input, got shape {x.shape}")
    h, w, c = x.shape
    ph, pw = window
    if h < ph or w < pw or stride < 1:
        raise ValueError(f"pooling window {window} stride {stride} does not fit input {x.shape}")
    h_out = (h - ph) // stride + 1
    w_out = (w - pw) // stride + 1
    if out is None:
        out = np.empty((h_out, w_out, c), dtype=x.dtype)
    _kernels.maxpool(x, ph, pw, stride, out)
    return out


def batchnorm_forward(layer: BatchNormLayer, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """y = gamma * (x - mean) / sqrt(var + eps) + beta, channels last.

    Computed in float64; the fused threshold path is calibrated against
    exactly this expression.
    """
    x = np.asarray(x)
    if x.shape[-1] != layer.channels:
        raise ValueError(f"channel mismatch: input {x.shape[-1]}, layer {layer.channels}")
    if out is None:
        out = np.empty(x.shape, dtype=np.float64)
    np.copyto(out, x)
    out -= layer.mean64
    out *= layer.scale64
    out += layer.beta64
    return out


def sign_pack(x: np.ndarray) -> PackedTensor:
    """Binarize (sign, with sign(0) = +1) and pack, axis by the L rule.

    The sign is taken in the input's own dtype before any narrowing, so
    a float64 value that would underflow float32 still keeps its sign.
    NaN compares not-less-than-zero and maps to +1.
    """
    x = np.asarray(x)
    if x.ndim == 1:
        x = x.reshape(1, 1, -1)
    return pack(FloatTensor(np.where(x < 0, np.float32(-1.0), np.float32(1.0))))


def fused_bn_sign(layer: BatchNormLayer, x: np.ndarray, flat: bool = False,
                  out: np.ndarray | None = None) -> PackedTensor:
    """sign(batchnorm(x)) straight to packed bits via integer thresholds.

    x: integer activations, (H, W, C) or a flat (C,) vector. flat=True
    packs the whole tensor as one line in layout order for a following
    dense layer; otherwise one line per (m, n) site.
    """
    x = np.asarray(x)
    if x.ndim == 1:
        x = x.reshape(1, 1, -1)
    if x.ndim != 3 or x.shape[-1] != layer.channels:
        raise ValueError(f"expected (.., .., {layer.channels}) integer activations, got {x.shape}")
    if x.dtype.kind not in "iu":
        raise ValueError(f"fused path wants integer activations, got {x.dtype}")
    h, w, c = x.shape
    sites = h * w
    if c == 1 and not flat and sites > 1:
        # single-channel spatial tensor packs column-axis, one line per row
        cond = (x[:, :, 0] >= layer.thresh[0]) if layer.ge_dir[0] else (x[:, :, 0] <= layer.thresh[0])
        vals = np.where(cond, 1.0, -1.0).astype(np.float32)
        if out is None:
            out = np.zeros((h, words_per_line(w)), dtype=np.uint64)
        _kernels.pack_lines(vals, out)
        return PackedTensor((h, w, 1), Axis.COLUMN, out, w)
    if flat or sites == 1:
        dims = (1, 1, sites * c)
        n_lines, bits = 1, sites * c
    else:
        dims = (h, w, c)
        n_lines, bits = sites, c
    if out is None:
        out = np.zeros((n_lines, words_per_line(bits)), dtype=np.uint64)
    _kernels.threshold_sign_pack(np.ascontiguousarray(x).reshape(sites, c), layer.thresh, layer.ge_dir,
                                 flat or sites == 1, out)
    return PackedTensor(dims, Axis.CHANNEL if dims[2] > 1 else Axis.COLUMN, out, bits)
