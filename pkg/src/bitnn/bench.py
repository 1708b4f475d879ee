"""Benchmark harness: wall-time measurement and report shapes.

Timing uses a monotonic clock and reports the mean over the requested
iterations after 3 untimed warm-up runs. Absolute times are machine
facts, not contracts; the interesting outputs are the packed/reference
ratios and the deterministic result checksums.
"""

from __future__ import annotations

import os
import platform
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .gemm import PackedMatrixA, PackedMatrixB, bgemm, sgemm_ref
from .network import Backend, Network, forward, model_size

WARMUP_RUNS = 3


@dataclass
class BenchReport:
    task: str
    iterations: int
    mean_ms: float
    median_ms: float
    min_ms: float
    weight_bytes: int
    machine: str

    def __post_init__(self):
        assert self.iterations >= 1
        assert self.min_ms > 0

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "iterations": self.iterations,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "min_ms": self.min_ms,
            "weight_bytes": self.weight_bytes,
            "machine": self.machine,
        }


def machine_note() -> str:
    try:
        import numba
        threads = numba.get_num_threads()
    except ImportError:  # pragma: no cover
        threads = 1
    return (f"{platform.machine()} {os.cpu_count()} cpus, "
            f"{threads} compute threads, numpy {np.__version__}")


def time_ms(fn, iters: int) -> list:
    """Wall-time samples in milliseconds after warm-up runs."""
    for _ in range(WARMUP_RUNS):
        fn()
    samples = []
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return samples


def _report(task, samples, weight_bytes, machine) -> BenchReport:
    return BenchReport(task, len(samples), statistics.fmean(samples),
                       statistics.median(samples), min(samples),
                       weight_bytes, machine)


def bench_gemm(size: int = 4096, iters: int = 100, seed: int = 0) -> dict:
    """Square bgemm against float sgemm_ref on the same ±1 operands."""
    if size < 64:
        raise ValueError(f"size must be at least 64, got {size}")
    rng = np.random.default_rng(seed)
    af = np.where(rng.random((size, size)) < 0.5, -1.0, 1.0).astype(np.float32)
    bf = np.where(rng.random((size, size)) < 0.5, -1.0, 1.0).astype(np.float32)
    pa = PackedMatrixA.from_float(af)
    pb = PackedMatrixB.from_float(bf)
    out_packed = np.zeros((size, size), dtype=np.int32)
    out_ref = np.zeros((size, size), dtype=np.float32)

    machine = machine_note()
    packed_samples = time_ms(lambda: bgemm(pa, pb, out=out_packed), iters)
    ref_samples = time_ms(lambda: sgemm_ref(af, bf, out=out_ref), iters)
    packed = _report("bgemm", packed_samples, pa.words.nbytes + pb.words.nbytes, machine)
    reference = _report("sgemm", ref_samples, af.nbytes + bf.nbytes, machine)
    assert np.array_equal(out_packed, out_ref.astype(np.int32))
    return {
        "task": "bench-gemm",
        "size": size,
        "iterations": iters,
        "packed": packed.to_dict(),
        "reference": reference.to_dict(),
        "ratio": reference.mean_ms / packed.mean_ms,
        "checksum": int(np.sum(out_packed, dtype=np.int64)),
        "machine": machine,
    }


def bench_net(spec, image: np.ndarray, iters: int = 100) -> dict:
    """Per-image forward time for both backends, batch fixed at one."""
    machine = machine_note()
    sizes = model_size(spec)
    reports = {}
    for backend in (Backend.PACKED, Backend.REFERENCE):
        net = Network(spec, backend)
        samples = time_ms(lambda: forward(net, image), iters)
        reports[backend.value] = _report(
            f"forward-{backend.value}", samples, sizes[backend.value], machine)
    return {
        "task": "bench-net",
        "iterations": iters,
        "batch": 1,
        "packed": reports["packed"].to_dict(),
        "reference": reports["reference"].to_dict(),
        "ratio": reports["reference"].mean_ms / reports["packed"].mean_ms,
        "memory": sizes,
        "memory_ratio": sizes["reference"] / sizes["packed"],
        "machine": machine,
    }
