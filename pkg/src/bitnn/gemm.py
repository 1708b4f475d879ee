"""Binary GEMM on packed words and the float32 reference path.

A binary dot product over ±1 values reduces to counting bit
mismatches: with +1 encoded as 1 and -1 as 0,

    dot(a, b) = K - 2 * popcount(a XOR b)

summed over the packed words. Padding bits are zero in both operands,
so XOR contributes no spurious mismatches and no tail masking is
needed anywhere.

Matrix operands come pre-packed in two orientations so every dot reads
contiguous words from both sides: PackedMatrixA packs rows,
PackedMatrixB packs columns of the logical K x N matrix.

sgemm_ref delegates to numpy's BLAS-backed matmul and doubles as the
performance baseline for the packed kernels.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .tensor import WORD_BITS, words_per_line

# int32 accumulators hold |dot| <= K; cap K well below 2^31 so there is
# headroom even after the bit-plane shifts (2^7 * K for byte inputs).
MAX_K = 1 << 24


def _check_k(k: int):
    if not (1 <= k <= MAX_K):
        raise ValueError(f"dot length {k} outside supported range 1..{MAX_K}")


def _pack_rows(mat: np.ndarray) -> np.ndarray:
    """Pack each row of a ±1 matrix into uint64 words, LSB-first."""
    rows, k = mat.shape
    words = np.zeros((rows, words_per_line(k)), dtype=np.uint64)
    _kernels.pack_lines(np.ascontiguousarray(mat, dtype=np.float32), words)
    return words


class PackedMatrixA:
    """M x K binary matrix, each row packed to ceil(K/64) words."""

    def __init__(self, rows: int, k: int, words: np.ndarray):
        _check_k(k)
        if words.shape != (rows, words_per_line(k)) or words.dtype != np.uint64:
            raise ValueError(f"expected uint64 words {(rows, words_per_line(k))}, got {words.dtype} {words.shape}")
        self.rows = rows
        self.k = k
        self.words = words

    @classmethod
    def from_float(cls, mat: np.ndarray) -> "PackedMatrixA":
        mat = np.asarray(mat)
        if mat.ndim != 2:
            raise ValueError("expected a 2-D matrix")
        return cls(mat.shape[0], mat.shape[1], _pack_rows(mat))


class PackedMatrixB:
    """K x N binary matrix, each column packed to ceil(K/64) words.

    Stored column-major (words[n] is column n) so a dot over K streams
    contiguous words from both operands.
    """

    def __init__(self, k: int, cols: int, words: np.ndarray):
        _check_k(k)
        if words.shape != (cols, words_per_line(k)) or words.dtype != np.uint64:
            raise ValueError(f"expected uint64 words {(cols, words_per_line(k))}, got {words.dtype} {words.shape}")
        self.k = k
        self.cols = cols
        self.words = words

    @classmethod
    def from_float(cls, mat: np.ndarray) -> "PackedMatrixB":
        mat = np.asarray(mat)
        if mat.ndim != 2:
            raise ValueError("expected a 2-D matrix")
        return cls(mat.shape[0], mat.shape[1], _pack_rows(mat.T))


def bdot(a_words: np.ndarray, b_words: np.ndarray, k: int) -> int:
    """Dot product of two packed ±1 lines of true length k.

    Kept at the numpy-op level (no JIT) so it is an independent route
    from the kernel GEMMs; the test suite cross-checks the two.
    """
    _check_k(k)
    if a_words.shape != b_words.shape or a_words.shape != (words_per_line(k),):
        raise ValueError(f"expected {words_per_line(k)} words per operand, got {a_words.shape} and {b_words.shape}")
    mismatches = int(np.bitwise_count(a_words ^ b_words).sum())
    return k - 2 * mismatches


def bgemm(a: PackedMatrixA, b: PackedMatrixB, out: np.ndarray | None = None) -> np.ndarray:
    """C[m, n] = bdot(row m of a, col n of b, K) as int32."""
    if a.k != b.k:
        raise ValueError(f"inner dimensions differ: {a.k} vs {b.k}")
    if out is None:
        out = np.empty((a.rows, b.cols), dtype=np.int32)
    _kernels.bgemm_packed(a.words, b.words, a.k, out)
    return out


def bgemv(a: PackedMatrixA, x_words: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """y[m] = bdot(row m of a, x, K); the batch-of-one dense kernel."""
    if x_words.shape != (a.words.shape[1],):
        raise ValueError(f"expected packed vector of {a.words.shape[1]} words, got {x_words.shape}")
    if out is None:
        out = np.empty(a.rows, dtype=np.int32)
    _kernels.bgemv_packed(a.words, x_words, a.k, out)
    return out


def bitplane_dot(plane_words: np.ndarray, w_words: np.ndarray, k: int) -> int:
    """Dot of an unsigned byte vector (as 8 packed bit-planes) with a
    packed ±1 line.

    Plane bits are {0, 1}, not ±1, so each plane contributes through
    AND: s_i = 2*popcount(plane_i AND w) - popcount(plane_i), and the
    result is sum_i 2^i * s_i. Exact integer arithmetic throughout.
    """
    _check_k(k)
    wpl = words_per_line(k)
    if plane_words.shape != (8, wpl) or w_words.shape != (wpl,):
        raise ValueError(f"expected planes (8, {wpl}) and weights ({wpl},), got {plane_words.shape} and {w_words.shape}")
    matches = np.bitwise_count(plane_words & w_words[None, :]).sum(axis=1, dtype=np.int64)
    pops = np.bitwise_count(plane_words).sum(axis=1, dtype=np.int64)
    return int(((2 * matches - pops) << np.arange(8, dtype=np.int64)).sum())


def bitplane_gemv(plane_words: np.ndarray, a: PackedMatrixA, out: np.ndarray | None = None) -> np.ndarray:
    """y[u] = bitplane_dot(planes, row u of a, K) for every weight row."""
    wpl = a.words.shape[1]
    if plane_words.shape != (8, wpl):
        raise ValueError(f"expected planes of shape (8, {wpl}), got {plane_words.shape}")
    if out is None:
        out = np.empty(a.rows, dtype=np.int64)
    pops = np.bitwise_count(plane_words).sum(axis=1, dtype=np.int64)
    _kernels.bitplane_matvec(plane_words, pops, a.words, out)
    return out


def sgemm_ref(a: np.ndarray, b: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Float32 matrix product, the reference backend's inner kernel.

    Delegates to numpy matmul (BLAS sgemm), which is cache-blocked and
    threaded; it is both the correctness oracle target and the speed
    baseline the packed path is measured against.
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"incompatible shapes {a.shape} x {b.shape}")
    return np.matmul(a, b, out=out)
