import numpy as np
import pytest

from bitnn import Axis, FloatTensor, bitplanes, linear_offset, pack, unpack
from bitnn.tensor import WORD_BITS, PackedTensor, words_per_line


def oracle_pack_bits(values):
    """Bit-by-bit packing oracle: sign rule + LSB-first word fill."""
    words = [0] * words_per_line(len(values))
    for i, v in enumerate(values):
        if v >= 0:
            words[i // 64] |= 1 << (i % 64)
    return words


def test_linear_offset_origin():
    assert linear_offset(0, 0, 0, (3, 3, 3)) == 0


def test_linear_offset_example():
    assert linear_offset(1, 2, 3, (4, 4, 8)) == 51


def test_linear_offset_bijection():
    dims = (3, 5, 7)
    seen = [linear_offset(m, n, l, dims) for m in range(3) for n in range(5) for l in range(7)]
    assert sorted(seen) == list(range(3 * 5 * 7))


def test_linear_offset_bounds():
    with pytest.raises(IndexError):
        linear_offset(3, 0, 0, (3, 5, 7))
    with pytest.raises(IndexError):
        linear_offset(0, 0, -1, (3, 5, 7))


def test_pack_all_plus_one_column_axis():
    p = pack(FloatTensor(np.ones((1, 64, 1), dtype=np.float32)))
    assert p.axis is Axis.COLUMN
    assert p.words.shape == (1, 1)
    assert int(p.words[0, 0]) == 0xFFFFFFFFFFFFFFFF


def test_pack_all_minus_one_channel_axis():
    p = pack(FloatTensor(-np.ones((1, 1, 64), dtype=np.float32)))
    assert p.axis is Axis.CHANNEL
    assert int(p.words[0, 0]) == 0


def test_pack_alternating_70_matches_bit_oracle():
    vals = [1.0 if i % 2 == 0 else -1.0 for i in range(70)]
    arr = np.array(vals, dtype=np.float32).reshape(1, 70, 1)
    p = pack(FloatTensor(arr))
    assert p.words.shape == (1, 2)
    expect = oracle_pack_bits(vals)
    assert [int(w) for w in p.words[0]] == expect
    # bits 70..127 of the tail word are padding and must be zero
    assert int(p.words[0, 1]) >> (70 - 64) == 0


def test_pack_sign_of_zero_is_plus_one():
    arr = np.zeros((1, 3, 1), dtype=np.float32)
    arr[0, 1, 0] = -2.0
    p = pack(FloatTensor(arr))
    assert [p.bit(0, n, 0) for n in range(3)] == [1, 0, 1]


def test_pack_matches_oracle_random_lines():
    rng = np.random.default_rng(1234)
    for _ in range(50):
        rows = int(rng.integers(1, 5))
        cols = int(rng.integers(1, 130))
        channels = int(rng.integers(1, 130))
        arr = rng.standard_normal((rows, cols, channels)).astype(np.float32)
        p = pack(FloatTensor(arr))
        if channels > 1:
            assert p.axis is Axis.CHANNEL
            lines = arr.reshape(rows * cols, channels)
        else:
            assert p.axis is Axis.COLUMN
            lines = arr.reshape(rows, cols)
        for li in range(lines.shape[0]):
            assert [int(w) for w in p.words[li]] == oracle_pack_bits(lines[li])


def test_padding_bits_zero_after_pack():
    rng = np.random.default_rng(99)
    for cols in (1, 63, 64, 65, 100, 128, 129):
        arr = np.where(rng.random((3, cols, 1)) < 0.5, -1.0, 1.0).astype(np.float32)
        p = pack(FloatTensor(arr))
        tail = p.bits_per_line % WORD_BITS
        if tail:
            assert int(p.words[:, -1].max()) >> tail == 0


def test_unpack_single_bit():
    words = np.zeros((1, 1), dtype=np.uint64)
    words[0, 0] = 1
    p = PackedTensor((1, 64, 1), Axis.COLUMN, words, 64)
    line = unpack(p).array[0, :, 0]
    assert line[0] == 1.0
    assert np.all(line[1:] == -1.0)


def test_unpack_all_zero_words():
    p = PackedTensor((2, 32, 1), Axis.COLUMN, np.zeros((2, 1), dtype=np.uint64), 32)
    assert np.all(unpack(p).array == -1.0)


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(7)
    for dims in [(5, 9, 3), (2, 70, 1), (1, 1, 200), (4, 4, 8)]:
        arr = np.where(rng.random(dims) < 0.5, -1.0, 1.0).astype(np.float32)
        assert np.array_equal(unpack(pack(FloatTensor(arr))).array, arr)


def test_bitplanes_all_zero():
    bp = bitplanes(np.zeros((2, 3, 4), dtype=np.uint8))
    for plane in bp.planes:
        assert int(plane.words.max()) == 0


def test_bitplanes_single_five():
    bp = bitplanes(np.array([[[5]]], dtype=np.uint8))
    assert [bp.planes[i].bit(0, 0, 0) for i in range(8)] == [1, 0, 1, 0, 0, 0, 0, 0]


def test_bitplanes_all_single_byte_values():
    arr = np.arange(256, dtype=np.uint8).reshape(1, 256, 1)
    bp = bitplanes(arr)
    for n in range(256):
        v = sum(bp.planes[i].bit(0, n, 0) << i for i in range(8))
        assert v == n


def test_bitplanes_reconstruction_random():
    rng = np.random.default_rng(42)
    arr = rng.integers(0, 256, size=(4, 7, 3), dtype=np.uint8)
    bp = bitplanes(arr)
    assert bp.dims == (4, 7, 3)
    recon = np.zeros(arr.shape, dtype=np.int64)
    for i, plane in enumerate(bp.planes):
        assert plane.axis is Axis.CHANNEL
        for m in range(4):
            for n in range(7):
                for l in range(3):
                    recon[m, n, l] += plane.bit(m, n, l) << i
    assert np.array_equal(recon, arr)


def test_bitplanes_padding_zero():
    rng = np.random.default_rng(5)
    arr = rng.integers(0, 256, size=(2, 3, 70), dtype=np.uint8)
    bp = bitplanes(arr)
    for plane in bp.planes:
        tail = plane.bits_per_line % WORD_BITS
        assert int(plane.words[:, -1].max()) >> tail == 0


def test_packed_tensor_rejects_dirty_padding():
    words = np.zeros((1, 2), dtype=np.uint64)
    words[0, 1] = np.uint64(1) << np.uint64(10)  # bit 74 of a 70-bit line
    with pytest.raises(ValueError):
        PackedTensor((1, 70, 1), Axis.COLUMN, words, 70)


def test_tensors_immutable():
    t = FloatTensor(np.ones((2, 2, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        t.array[0, 0, 0] = 5.0
    p = pack(t)
    with pytest.raises(ValueError):
        p.words[0, 0] = np.uint64(0)
