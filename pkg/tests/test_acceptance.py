"""End-to-end acceptance: one test per shipping criterion.

Run with -v to get one pass/fail line per criterion. Each test states
its tolerance inline; the exact-arithmetic checks use zero tolerance.
"""

import time
import tracemalloc

import numpy as np

from bitnn.bench import bench_gemm
from bitnn.gemm import PackedMatrixA, PackedMatrixB, bdot, bgemm, bitplane_dot, sgemm_ref
from bitnn.layers import ConvLayer, Input8Layer, conv_forward, input8_forward
from bitnn.modelfile import (
    BatchNormRecord,
    ConvRecord,
    DenseRecord,
    Input8Record,
    MaxPoolRecord,
    ModelSpec,
)
from bitnn.network import Backend, Network, forward, model_size
from bitnn.tensor import FloatTensor, pack, words_per_line


def rand_pm1(rng, *shape):
    return np.where(rng.random(shape) < 0.5, -1.0, 1.0).astype(np.float32)


def pack_rows(mat):
    return PackedMatrixA.from_float(np.ascontiguousarray(mat, dtype=np.float32)).words


def pack_line(vec):
    return pack_rows(vec.reshape(1, -1))[0]


def byte_planes(u):
    """Independent bit-plane packing via numpy packbits, little-endian."""
    k = u.shape[0]
    wpl = words_per_line(k)
    planes = np.zeros((8, wpl), dtype=np.uint64)
    for p in range(8):
        bits = ((u >> p) & 1).astype(np.uint8)
        packed = np.packbits(bits, bitorder="little")
        buf = np.zeros(wpl * 8, dtype=np.uint8)
        buf[:packed.shape[0]] = packed
        planes[p] = buf.view(np.uint64)
    return planes


def direct_conv(x, w4, stride, pad):
    """Zero-padded convolution, explicit loops, float64."""
    h, w, c = x.shape
    kh, kw, _, f = w4.shape
    xp = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=np.float64)
    xp[pad:pad + h, pad:pad + w] = x
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((h_out, w_out, f), dtype=np.float64)
    for i in range(h_out):
        for j in range(w_out):
            win = xp[i * stride:i * stride + kh, j * stride:j * stride + kw, :]
            for ff in range(f):
                out[i, j, ff] = float(np.sum(win * w4[:, :, :, ff]))
    return out


def bn_rec(rng, c, spread):
    return BatchNormRecord(
        (rng.standard_normal(c) * spread).astype(np.float32),
        (rng.random(c) * 50 + 1).astype(np.float32),
        rng.standard_normal(c).astype(np.float32),
        rng.standard_normal(c).astype(np.float32),
        1e-5,
    )


def vgg_like_cnn(rng):
    """32x32x3 input, 2x(32C3) - MP2 - 2x(64C3) - MP2 - FC256 - FC10."""
    return ModelSpec((32, 32, 3), [
        bn_rec(rng, 3, 100.0),
        ConvRecord(32, 3, 3, 1, 1, 3, pack_rows(rand_pm1(rng, 32, 27))),
        bn_rec(rng, 32, 8.0),
        ConvRecord(32, 3, 3, 1, 1, 32, pack_rows(rand_pm1(rng, 32, 288))),
        MaxPoolRecord(2, 2, 2),
        bn_rec(rng, 32, 30.0),
        ConvRecord(64, 3, 3, 1, 1, 32, pack_rows(rand_pm1(rng, 64, 288))),
        bn_rec(rng, 64, 30.0),
        ConvRecord(64, 3, 3, 1, 1, 64, pack_rows(rand_pm1(rng, 64, 576))),
        MaxPoolRecord(2, 2, 2),
        bn_rec(rng, 64, 60.0),
        DenseRecord(256, 4096, pack_rows(rand_pm1(rng, 256, 4096))),
        bn_rec(rng, 256, 20.0),
        DenseRecord(10, 256, pack_rows(rand_pm1(rng, 10, 256))),
        bn_rec(rng, 10, 4.0),
    ])


def test_binary_gemm_exactness():
    # 200 randomized (M, K, N), M and N up to 256, K up to 300, zero error
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    forced_k = [1, 63, 64, 65, 128, 129, 192, 255, 256, 300]
    for trial in range(200):
        m = int(rng.integers(1, 257))
        n = int(rng.integers(1, 257))
        k = forced_k[trial] if trial < len(forced_k) else int(rng.integers(1, 301))
        af = rand_pm1(rng, m, k)
        bf = rand_pm1(rng, k, n)
        got = bgemm(PackedMatrixA.from_float(af), PackedMatrixB.from_float(bf))
        want = sgemm_ref(af, bf)
        assert np.array_equal(got, want.astype(np.int32)), (m, k, n)
    assert time.perf_counter() - t0 < 60.0


def test_dot_product_suite():
    rng = np.random.default_rng(2025)
    for k in list(range(1, 66)) + [127, 128, 129, 191, 192, 255, 300]:
        a = rand_pm1(rng, k)
        wa = pack_line(a)
        assert bdot(wa, wa, k) == k
        assert bdot(wa, pack_line(-a), k) == -k
    for _ in range(1000):
        k = int(rng.integers(1, 301))
        a = rand_pm1(rng, k)
        b = rand_pm1(rng, k)
        expect = int(np.dot(a.astype(np.int64), b.astype(np.int64)))
        assert bdot(pack_line(a), pack_line(b), k) == expect


def test_byte_input_first_layer():
    rng = np.random.default_rng(2026)
    for _ in range(1000):
        u = rng.integers(0, 256, size=784, dtype=np.uint8)
        w = rand_pm1(rng, 4, 784)
        expect = w.astype(np.int64) @ u.astype(np.int64)
        planes = byte_planes(u)
        layer = Input8Layer(PackedMatrixA.from_float(w))
        assert np.array_equal(input8_forward(layer, u), expect)
        assert bitplane_dot(planes, pack_line(w[0]), 784) == expect[0]


def test_padding_correction():
    rng = np.random.default_rng(2027)
    for trial in range(200):
        pad = trial % 3
        stride = int(rng.integers(1, 3))
        kh = int(rng.integers(1, 6))
        kw = int(rng.integers(1, 6))
        c = int(rng.choice([1, 2, 3, 4, 8, 16]))
        f = int(rng.integers(1, 9))
        h = int(rng.integers(max(1, kh - 2 * pad), 13))
        w = int(rng.integers(max(1, kw - 2 * pad), 13))
        if h + 2 * pad < kh or w + 2 * pad < kw:
            continue
        x = rand_pm1(rng, h, w, c)
        wf = rand_pm1(rng, kh * kw * c, f)
        layer = ConvLayer.from_float(wf, (kh, kw), stride, pad, (h, w, c))
        got = conv_forward(layer, pack(FloatTensor(x)))
        want = direct_conv(x, wf.reshape(kh, kw, c, f), stride, pad)
        assert np.array_equal(got.astype(np.float64), want), (h, w, c, kh, kw, stride, pad)


def test_cross_backend_cnn():
    # 1000 random inputs: identical argmax, score gap below 1e-4
    rng = np.random.default_rng(2028)
    spec = vgg_like_cnn(rng)
    packed = Network(spec, Backend.PACKED)
    reference = Network(spec, Backend.REFERENCE)
    worst = 0.0
    for _ in range(1000):
        img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        sp = forward(packed, img).copy()
        sr = forward(reference, img)
        assert int(np.argmax(sp)) == int(np.argmax(sr))
        worst = max(worst, float(np.max(np.abs(sp - sr))))
    assert worst < 1e-4


def test_memory_ratio():
    def dense(units, k):
        return DenseRecord(units, k, np.zeros((units, words_per_line(k)), dtype=np.uint64))

    def bn(c):
        z = np.zeros(c, dtype=np.float32)
        return BatchNormRecord(z, np.ones(c, dtype=np.float32), z + 1, z, 1e-5)

    mlp = ModelSpec((1, 1, 784), [
        Input8Record(4096, 784, np.zeros((4096, 13), dtype=np.uint64)), bn(4096),
        dense(4096, 4096), bn(4096),
        dense(4096, 4096), bn(4096),
        dense(10, 4096), bn(10),
    ])
    size = model_size(mlp)
    mib = 1024 * 1024
    assert abs(size["reference"] / mib - 140.6) / 140.6 < 0.05
    assert abs(size["packed"] / mib - 4.6) / 4.6 < 0.05
    assert size["reference"] / size["packed"] >= 30

    cnn = model_size(vgg_like_cnn(np.random.default_rng(2029)))
    assert cnn["reference"] / cnn["packed"] >= 30


def test_relative_gemm_speedup():
    report = bench_gemm(size=4096, iters=20)
    assert report["ratio"] >= 4.0, report


def test_no_allocation_forward():
    rng = np.random.default_rng(2030)
    mlp = ModelSpec((1, 1, 784), [
        Input8Record(256, 784, pack_rows(rand_pm1(rng, 256, 784))),
        bn_rec(rng, 256, 5000.0),
        DenseRecord(256, 256, pack_rows(rand_pm1(rng, 256, 256))),
        bn_rec(rng, 256, 8.0),
        DenseRecord(10, 256, pack_rows(rand_pm1(rng, 10, 256))),
        bn_rec(rng, 10, 4.0),
    ])
    for spec, shape in ((vgg_like_cnn(rng), (32, 32, 3)), (mlp, (784,))):
        img = rng.integers(0, 256, shape, dtype=np.uint8)
        for backend in (Backend.PACKED, Backend.REFERENCE):
            net = Network(spec, backend)
            scores = forward(net, img)  # warm-up pass
            assert net.workspace.owns(scores)
            before = net.workspace.total_bytes
            tracemalloc.start()
            for _ in range(10):
                out = forward(net, img)
            grown, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
            assert out is scores
            assert grown == 0, (backend, grown)
            assert peak < 2048, (backend, peak)  # transient view headers only
            assert net.workspace.total_bytes == before
