"""Tensor representations: dense float, bit-packed, and byte bit-planes.

A dense tensor is M x N x L (rows, columns, channels) stored row-major
with interleaved channels, so element (m, n, l) sits at linear offset
(m*N + n)*L + l.

Bit-packed tensors store one binary element per bit, 64 per word:

  * packing runs along the channel axis when L > 1 (one line per (m, n)
    site, L bits long), and along the column axis when L == 1 (one line
    per row, N bits long);
  * within a word the first element is the least significant bit;
  * +1 encodes to 1, -1 to 0;
  * each line is padded independently to whole words and the padding
    bits are always zero.

Tensors are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import enum

import numpy as np

from . import _kernels

WORD_BITS = 64


class Axis(enum.Enum):
    """Packing direction of a PackedTensor."""

    CHANNEL = "channel"
    COLUMN = "column"


def linear_offset(m: int, n: int, l: int, dims: tuple[int, int, int]) -> int:
    """Linear memory offset of element (m, n, l) in an M x N x L tensor."""
    rows, cols, channels = dims
    if not (0 <= m < rows and 0 <= n < cols and 0 <= l < channels):
        raise IndexError(f"index ({m}, {n}, {l}) out of range for dims {dims}")
    return (m * cols + n) * channels + l


def words_per_line(bits: int) -> int:
    return -(-bits // WORD_BITS)


class FloatTensor:
    """Dense 3-D float32 tensor, row-major with interleaved channels."""

    def __init__(self, array: np.ndarray):
        arr = np.ascontiguousarray(array, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"expected a 3-D array, got shape {array.shape}")
        arr.flags.writeable = False
        self._array = arr

    @property
    def rows(self) -> int:
        return self._array.shape[0]

    @property
    def cols(self) -> int:
        return self._array.shape[1]

    @property
    def channels(self) -> int:
        return self._array.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self._array.shape

    @property
    def array(self) -> np.ndarray:
        """The (M, N, L) view; its flat order is the layout order."""
        return self._array

    @property
    def data(self) -> np.ndarray:
        """Flat element array of length M*N*L, in layout order."""
        return self._array.reshape(-1)

    def get(self, m: int, n: int, l: int) -> float:
        return float(self.data[linear_offset(m, n, l, self.dims)])

    def __repr__(self):
        return f"FloatTensor({self.rows}x{self.cols}x{self.channels})"


class PackedTensor:
    """Bit-packed binary tensor; see the module docstring for the layout."""

    def __init__(self, dims: tuple[int, int, int], axis: Axis, words: np.ndarray, bits_per_line: int):
        rows, cols, channels = dims
        n_lines = rows * cols if axis is Axis.CHANNEL else rows
        wpl = words_per_line(bits_per_line)
        if words.shape != (n_lines, wpl) or words.dtype != np.uint64:
            raise ValueError(f"expected uint64 words of shape {(n_lines, wpl)}, got {words.dtype} {words.shape}")
        if axis is Axis.COLUMN and channels != 1:
            raise ValueError("column-axis packing requires a single channel")
        tail = bits_per_line % WORD_BITS
        if tail and n_lines and int(words[:, -1].max(initial=0) >> np.uint64(tail)):
            raise ValueError("nonzero padding bits in packed tensor")
        words = words.copy() if words.flags.writeable else words
        words.flags.writeable = False
        self.dims = dims
        self.axis = axis
        self.words = words
        self.bits_per_line = bits_per_line

    @property
    def rows(self) -> int:
        return self.dims[0]

    @property
    def cols(self) -> int:
        return self.dims[1]

    @property
    def channels(self) -> int:
        return self.dims[2]

    @property
    def words_per_line(self) -> int:
        return self.words.shape[1]

    @property
    def n_lines(self) -> int:
        return self.words.shape[0]

    def bit(self, m: int, n: int, l: int) -> int:
        """The stored bit for element (m, n, l): 1 for +1, 0 for -1."""
        linear_offset(m, n, l, self.dims)
        if self.axis is Axis.CHANNEL:
            line, b = m * self.cols + n, l
        else:
            line, b = m, n
        return int((self.words[line, b // WORD_BITS] >> np.uint64(b % WORD_BITS)) & np.uint64(1))

    def __repr__(self):
        return f"PackedTensor({self.rows}x{self.cols}x{self.channels}, axis={self.axis.value})"


class BitPlanes:
    """Eight packed bit-planes of a byte tensor; plane i holds bit i."""

    def __init__(self, planes: list[PackedTensor]):
        if len(planes) != 8:
            raise ValueError("byte inputs decompose into exactly 8 planes")
        self.planes = planes

    @property
    def plane_count(self) -> int:
        return len(self.planes)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.planes[0].dims


def _axis_for(dims: tuple[int, int, int]) -> Axis:
    return Axis.CHANNEL if dims[2] > 1 else Axis.COLUMN


def _as_lines(arr: np.ndarray, axis: Axis) -> np.ndarray:
    rows, cols, channels = arr.shape
    if axis is Axis.CHANNEL:
        return arr.reshape(rows * cols, channels)
    return arr.reshape(rows, cols)


def pack(t: FloatTensor) -> PackedTensor:
    """Binarize a float tensor (sign, with sign(0) = +1) and bit-pack it.

    The packing axis follows the channel rule: along channels when L > 1,
    along columns when L == 1. NaN elements map to +1 like the sign
    kernel on the hot path; reject NaNs beforehand where that matters
    (the model loader does).
    """
    axis = _axis_for(t.dims)
    lines = _as_lines(t.array, axis)
    bits = lines.shape[1]
    words = np.zeros((lines.shape[0], words_per_line(bits)), dtype=np.uint64)
    _kernels.pack_lines(lines, words)
    return PackedTensor(t.dims, axis, words, bits)


def unpack(p: PackedTensor) -> FloatTensor:
    """Expand a packed tensor back to +/-1.0 floats with the same dims."""
    out = np.empty((p.n_lines, p.bits_per_line), dtype=np.float32)
    _kernels.unpack_lines(p.words, p.bits_per_line, out)
    return FloatTensor(out.reshape(p.dims))


def bitplanes(b: np.ndarray) -> BitPlanes:
    """Split an (M, N, L) uint8 tensor into 8 packed bit-planes.

    Plane i has the bit for (m, n, l) set iff bit i of that byte is set;
    planes are packed with the same axis rule and zero padding as pack().
    """
    arr = np.ascontiguousarray(b)
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 elements, got {arr.dtype}")
    if arr.ndim != 3:
        raise ValueError(f"expected a 3-D array, got shape {arr.shape}")
    axis = _axis_for(arr.shape)
    lines = _as_lines(arr, axis)
    bits = lines.shape[1]
    words = np.zeros((8, lines.shape[0], words_per_line(bits)), dtype=np.uint64)
    _kernels.pack_byte_planes(lines, words)
    return BitPlanes([PackedTensor(arr.shape, axis, words[i], bits) for i in range(8)])
