"""Numba JIT kernels: the word-level hot loops.

Everything here works on raw arrays; the packing convention is fixed
once for the whole engine:

  * 64 logical elements per uint64 word, LSB-first (element ``w*64 + j``
    lives in bit ``j`` of word ``w``),
  * logical +1 encodes to bit 1, -1 to bit 0,
  * bits past the true length of a line are zero.

With zero padding bits in both operands, XOR counts no spurious
mismatches, so the dot product is ``K - 2*popcount(a ^ b)`` with no
tail masking.

All kernels write into caller-provided output arrays; the network
forward pass preallocates those once at load time.
"""

import numpy as np
from numba import njit, prange

# Output tile sizes for the packed GEMM. Defaults chosen so one A-tile
# plus one B-tile of a K=4096 problem stay L1/L2 resident; re-tune only
# if the packed-vs-float speed ratio regresses below 4x.
TILE_M = 64
TILE_N = 64

_U1 = np.uint64(1)
_U6 = np.uint64(6)
_U63 = np.uint64(63)
_U64 = np.uint64(64)


@njit(inline="always")
def _popcount64(x):
    # SWAR popcount; LLVM lowers this to native popcount instructions.
    x = x - ((x >> _U1) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit(cache=True, parallel=True)
def pack_lines(lines, out):
    """Binarize and pack each row of `lines` into the rows of `out`.

    bit = 0 iff the element is < 0, so 0.0 and NaN both map to +1.
    """
    out[:] = 0
    n_lines, bits = lines.shape
    for li in prange(n_lines):
        for b in range(bits):
            if not (lines[li, b] < 0):
                out[li, np.uint64(b) >> _U6] |= _U1 << (np.uint64(b) & _U63)


@njit(cache=True, parallel=True)
def unpack_lines(words, bits, out):
    """Expand packed rows back to +/-1.0 values."""
    n_lines = words.shape[0]
    for li in prange(n_lines):
        for b in range(bits):
            bit = (words[li, np.uint64(b) >> _U6] >> (np.uint64(b) & _U63)) & _U1
            out[li, b] = 1.0 if bit else -1.0


@njit(cache=True, parallel=True)
def pack_byte_planes(lines, out):
    """Split byte rows into 8 packed bit-plane rows.

    lines: (n_lines, bits) uint8; out: (8, n_lines, words_per_line).
    """
    out[:] = 0
    n_lines, bits = lines.shape
    for li in prange(n_lines):
        for b in range(bits):
            v = lines[li, b]
            w = np.uint64(b) >> _U6
            m = _U1 << (np.uint64(b) & _U63)
            for p in range(8):
                if (v >> p) & 1:
                    out[p, li, w] |= m


@njit(cache=True, parallel=True)
def bgemm_packed(a_words, b_words, k, out):
    """out[m, n] = k - 2*popcount(a_row_m XOR b_col_n), tiled.

    a_words: (M, W) row-packed, b_words: (N, W) column-packed; both with
    zero padding bits. Parallel over output row tiles only, so results
    are bit-identical at any thread count.
    """
    m_total, w_total = a_words.shape
    n_total = b_words.shape[0]
    n_row_tiles = (m_total + TILE_M - 1) // TILE_M
    for mt in prange(n_row_tiles):
        m0 = mt * TILE_M
        m1 = min(m0 + TILE_M, m_total)
        for n0 in range(0, n_total, TILE_N):
            n1 = min(n0 + TILE_N, n_total)
            for m in range(m0, m1):
                for n in range(n0, n1):
                    acc = np.uint64(0)
                    for w in range(w_total):
                        acc += _popcount64(a_words[m, w] ^ b_words[n, w])
                    out[m, n] = k - 2 * np.int32(acc)


@njit(cache=True, parallel=True)
def bgemv_packed(a_words, x_words, k, out):
    """out[m] = k - 2*popcount(a_row_m XOR x); the batch-1 dense kernel."""
    m_total, w_total = a_words.shape
    for m in prange(m_total):
        acc = np.uint64(0)
        for w in range(w_total):
            acc += _popcount64(a_words[m, w] ^ x_words[w])
        out[m] = k - 2 * np.int32(acc)


@njit(cache=True)
def count_plane_bits(planes, out):
    """out[p] = popcount of plane p; planes (8, words_per_line)."""
    for p in range(planes.shape[0]):
        acc = np.uint64(0)
        for w in range(planes.shape[1]):
            acc += _popcount64(planes[p, w])
        out[p] = np.int64(acc)


@njit(cache=True, parallel=True)
def bitplane_matvec(planes, plane_pops, w_words, out):
    """Exact byte-vector x (+/-1)-matrix product from bit planes.

    planes: (8, W) packed bit planes of the byte vector, plane_pops[i] =
    popcount(plane i). For each weight row, the plane contribution is
    2*popcount(plane AND weights) - popcount(plane), summed as
    sum_i 2^i * s_i.
    """
    units, w_total = w_words.shape
    for u in prange(units):
        acc = np.int64(0)
        for p in range(8):
            m = np.uint64(0)
            for w in range(w_total):
                m += _popcount64(planes[p, w] & w_words[u, w])
            acc += (np.int64(2) * np.int64(m) - plane_pops[p]) << p
        out[u] = acc


@njit(inline="always")
def _or_bits(src, src_line, n_src_words, dst, dst_line, dst_bit0):
    # OR a word-aligned source bit run into dst at arbitrary bit offset.
    # Bits shifted past the end of dst's row are source padding (zero),
    # so the bounds guard only skips writes that would be no-ops.
    dw = dst_bit0 >> 6
    db = np.uint64(dst_bit0 & 63)
    if db == np.uint64(0):
        for w in range(n_src_words):
            dst[dst_line, dw + w] |= src[src_line, w]
    else:
        inv = _U64 - db
        row_words = dst.shape[1]
        for w in range(n_src_words):
            v = src[src_line, w]
            dst[dst_line, dw + w] |= v << db
            if dw + w + 1 < row_words:
                dst[dst_line, dw + w + 1] |= v >> inv


@njit(cache=True, parallel=True)
def unroll_packed(lines, h, w, c, axis_channel, kh, kw, stride, pad, out):
    """im2col on packed data: row r of `out` = receptive field of output
    position r, flattened (dy, dx, channel), channel fastest.

    Out-of-bounds window sites stay zero bits (logical -1); the conv
    correction map repairs that afterwards.
    """
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (w + 2 * pad - kw) // stride + 1
    site_words = (c + 63) >> 6
    out[:] = 0
    for r in prange(h_out * w_out):
        i = r // w_out
        j = r % w_out
        for dy in range(kh):
            ii = i * stride + dy - pad
            if ii < 0 or ii >= h:
                continue
            for dx in range(kw):
                jj = j * stride + dx - pad
                if jj < 0 or jj >= w:
                    continue
                bit0 = (dy * kw + dx) * c
                if axis_channel:
                    _or_bits(lines, ii * w + jj, site_words, out, r, bit0)
                else:
                    bit = (lines[ii, np.uint64(jj) >> _U6] >> (np.uint64(jj) & _U63)) & _U1
                    if bit:
                        out[r, bit0 >> 6] |= _U1 << np.uint64(bit0 & 63)


@njit(cache=True, parallel=True)
def unroll_float(x, kh, kw, stride, pad, out):
    """im2col on a (H, W, C) float tensor with true zero padding."""
    h, w, c = x.shape
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (w + 2 * pad - kw) // stride + 1
    for r in prange(h_out * w_out):
        i = r // w_out
        j = r % w_out
        for dy in range(kh):
            ii = i * stride + dy - pad
            for dx in range(kw):
                jj = j * stride + dx - pad
                base = (dy * kw + dx) * c
                if ii < 0 or ii >= h or jj < 0 or jj >= w:
                    for ch in range(c):
                        out[r, base + ch] = 0.0
                else:
                    for ch in range(c):
                        out[r, base + ch] = x[ii, jj, ch]


@njit(cache=True, parallel=True)
def maxpool(x, ph, pw, stride, out):
    """Per-channel window max on a (H, W, C) tensor; floor arithmetic."""
    h, w, c = x.shape
    h_out = (h - ph) // stride + 1
    w_out = (w - pw) // stride + 1
    for r in prange(h_out * w_out):
        i = r // w_out
        j = r % w_out
        for ch in range(c):
            best = x[i * stride, j * stride, ch]
            for dy in range(ph):
                for dx in range(pw):
                    v = x[i * stride + dy, j * stride + dx, ch]
                    if v > best:
                        best = v
            out[i, j, ch] = best


@njit(cache=True)
def threshold_sign_pack(x, thresh, ge_dir, flat, out):
    """Fused batchnorm + sign + pack on integer activations.

    x: (sites, C) int32. Channel c's bit is (x >= thresh[c]) when
    ge_dir[c] else (x <= thresh[c]); thresholds come pre-calibrated so
    this matches the float batchnorm + sign path bit for bit.

    flat=False packs one line per site (channel-axis layout); flat=True
    packs a single line in layout order, site*C + c, for a following
    dense layer.
    """
    out[:] = 0
    sites, c = x.shape
    for s in range(sites):
        for ch in range(c):
            v = np.int64(x[s, ch])
            t = thresh[ch]
            bit = (v >= t) if ge_dir[ch] else (v <= t)
            if bit:
                if flat:
                    k = s * c + ch
                    out[0, np.uint64(k) >> _U6] |= _U1 << (np.uint64(k) & _U63)
                else:
                    out[s, np.uint64(ch) >> _U6] |= _U1 << (np.uint64(ch) & _U63)


@njit(cache=True, parallel=True)
def sign_into(x, out):
    """Elementwise sign with sign(0) = +1 into a +/-1.0 buffer (1-D views)."""
    for i in prange(x.shape[0]):
        out[i] = -1.0 if x[i] < 0 else 1.0


@njit(cache=True)
def copy_cast(src, dst):
    # np.copyto with a dtype change buffers through a scratch nditer
    # allocation; this stays on the preallocated buffers (1-D views).
    for i in range(dst.shape[0]):
        dst[i] = src[i]


@njit(cache=True)
def bn_affine(x, mean, scale, beta, out):
    """(x - mean) * scale + beta in float64, channel fastest (1-D views).

    Written as a kernel because the numpy in-place broadcast ops buffer
    through a fresh nditer scratch block on every call.
    """
    c = mean.shape[0]
    for i in range(x.shape[0]):
        ch = i % c
        out[i] = (np.float64(x[i]) - mean[ch]) * scale[ch] + beta[ch]


@njit(cache=True)
def bn_affine_sign(x, mean, scale, beta, out):
    """bn_affine followed by sign with sign(0) = +1 into a +/-1.0 buffer."""
    c = mean.shape[0]
    for i in range(x.shape[0]):
        ch = i % c
        v = (np.float64(x[i]) - mean[ch]) * scale[ch] + beta[ch]
        out[i] = -1.0 if v < 0 else 1.0
