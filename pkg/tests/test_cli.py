import json

import numpy as np
import pytest

from bitnn.cli import main
from bitnn.gemm import PackedMatrixA
from bitnn.modelfile import (
    BatchNormRecord,
    ConvRecord,
    DenseRecord,
    Input8Record,
    MaxPoolRecord,
    ModelSpec,
    save_model,
)


def pack_rows(rng, rows, k):
    mat = np.where(rng.random((rows, k)) < 0.5, -1.0, 1.0).astype(np.float32)
    return PackedMatrixA.from_float(mat).words


def bn_rec(rng, c, spread=20.0):
    return BatchNormRecord(
        (rng.standard_normal(c) * spread).astype(np.float32),
        (rng.random(c) * 50 + 1).astype(np.float32),
        rng.standard_normal(c).astype(np.float32),
        rng.standard_normal(c).astype(np.float32),
        1e-5,
    )


@pytest.fixture
def mlp_model(tmp_path):
    rng = np.random.default_rng(70)
    spec = ModelSpec((1, 1, 784), [
        Input8Record(32, 784, pack_rows(rng, 32, 784)),
        bn_rec(rng, 32, 5000.0),
        DenseRecord(10, 32, pack_rows(rng, 10, 32)),
        bn_rec(rng, 10, 4.0),
    ])
    path = tmp_path / "mlp.bdnn"
    save_model(spec, path)
    return str(path)


@pytest.fixture
def mnist_dir(tmp_path):
    rng = np.random.default_rng(71)
    d = tmp_path / "mnist"
    d.mkdir()
    imgs = rng.integers(0, 256, (24, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, 24, dtype=np.uint8)
    with open(d / "t10k-images-idx3-ubyte", "wb") as f:
        f.write((0x803).to_bytes(4, "big") + (24).to_bytes(4, "big")
                + (28).to_bytes(4, "big") + (28).to_bytes(4, "big"))
        f.write(imgs.tobytes())
    with open(d / "t10k-labels-idx1-ubyte", "wb") as f:
        f.write((0x801).to_bytes(4, "big") + (24).to_bytes(4, "big"))
        f.write(labels.tobytes())
    return str(d)


def run_json(capsys, argv):
    rc = main(argv)
    out = capsys.readouterr().out
    assert rc == 0, out
    return json.loads(out)


# ---- classify ----

def test_classify_backends_agree(capsys, mlp_model, mnist_dir):
    base = ["classify", "--model", mlp_model, "--data-dir", mnist_dir, "--json"]
    packed = run_json(capsys, base + ["--backend", "packed"])
    ref = run_json(capsys, base + ["--backend", "reference"])
    assert packed["predictions"] == ref["predictions"]
    assert packed["count"] == 24
    assert packed["dataset"] == "mnist-idx"


def test_classify_accuracy_consistent(capsys, mlp_model, mnist_dir):
    rep = run_json(capsys, ["classify", "--model", mlp_model,
                            "--data-dir", mnist_dir, "--json"])
    # recompute accuracy from the label file directly
    from bitnn.datasets import discover
    labels = discover(mnist_dir).labels
    correct = sum(int(p == l) for p, l in zip(rep["predictions"], labels))
    assert rep["correct"] == correct
    assert rep["accuracy"] == correct / 24


def test_classify_threads_do_not_change_labels(capsys, mlp_model, mnist_dir):
    base = ["classify", "--model", mlp_model, "--data-dir", mnist_dir, "--json"]
    one = run_json(capsys, base + ["--threads", "1"])
    two = run_json(capsys, base + ["--threads", "2"])
    assert one["predictions"] == two["predictions"]


def test_classify_limit(capsys, mlp_model, mnist_dir):
    rep = run_json(capsys, ["classify", "--model", mlp_model, "--data-dir",
                            mnist_dir, "--limit", "5", "--json"])
    assert rep["count"] == 5
    assert len(rep["predictions"]) == 5


def test_classify_text_output(capsys, mlp_model, mnist_dir):
    assert main(["classify", "--model", mlp_model, "--data-dir", mnist_dir]) == 0
    out = capsys.readouterr().out
    assert "24" in out and "accuracy" in out


def test_classify_truncated_idx_is_data_error(capsys, mlp_model, mnist_dir):
    img = f"{mnist_dir}/t10k-images-idx3-ubyte"
    with open(img, "rb") as f:
        data = f.read()
    with open(img, "wb") as f:
        f.write(data[:-3])
    rc = main(["classify", "--model", mlp_model, "--data-dir", mnist_dir])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_classify_shape_mismatch_is_data_error(capsys, tmp_path, mnist_dir):
    rng = np.random.default_rng(72)
    spec = ModelSpec((8, 8, 1), [
        bn_rec(rng, 1, 100.0),
        ConvRecord(4, 3, 3, 1, 1, 1, pack_rows(rng, 4, 9)),
        MaxPoolRecord(2, 2, 2),
        bn_rec(rng, 4, 4.0),
        DenseRecord(10, 64, pack_rows(rng, 10, 64)),
        bn_rec(rng, 10, 4.0),
    ])
    path = tmp_path / "cnn.bdnn"
    save_model(spec, path)
    rc = main(["classify", "--model", str(path), "--data-dir", mnist_dir])
    assert rc == 2
    assert "does not fit" in capsys.readouterr().err


def test_classify_corrupt_model_is_data_error(capsys, tmp_path, mnist_dir):
    bad = tmp_path / "bad.bdnn"
    bad.write_bytes(b"XXXXXXXX" + bytes(32))
    assert main(["classify", "--model", str(bad), "--data-dir", mnist_dir]) == 2
    assert "magic" in capsys.readouterr().err


def test_classify_missing_model_is_data_error(capsys, tmp_path, mnist_dir):
    rc = main(["classify", "--model", str(tmp_path / "nope"), "--data-dir", mnist_dir])
    assert rc == 2
    capsys.readouterr()


# ---- usage errors ----

def test_missing_required_flag_is_usage_error(capsys):
    assert main(["classify"]) == 1
    capsys.readouterr()


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    capsys.readouterr()


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 1
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "classify" in capsys.readouterr().out


# ---- bench-gemm ----

def test_bench_gemm_report_fields(capsys):
    rep = run_json(capsys, ["bench-gemm", "--size", "128", "--iters", "2", "--json"])
    assert rep["task"] == "bench-gemm"
    assert rep["size"] == 128
    assert rep["iterations"] == 2
    for kind in ("packed", "reference"):
        sub = rep[kind]
        assert sub["iterations"] == 2
        assert sub["mean_ms"] > 0 and sub["min_ms"] > 0
    assert rep["ratio"] > 0
    assert rep["packed"]["weight_bytes"] == 2 * 128 * 2 * 8
    assert rep["reference"]["weight_bytes"] == 2 * 128 * 128 * 4


def test_bench_gemm_single_iteration(capsys):
    rep = run_json(capsys, ["bench-gemm", "--size", "64", "--iters", "1", "--json"])
    assert rep["iterations"] == 1
    assert rep["packed"]["iterations"] == 1


def test_bench_gemm_checksum_deterministic(capsys):
    a = run_json(capsys, ["bench-gemm", "--size", "128", "--iters", "1", "--json"])
    b = run_json(capsys, ["bench-gemm", "--size", "128", "--iters", "1", "--json"])
    assert a["checksum"] == b["checksum"]


def test_bench_gemm_size_floor(capsys):
    with pytest.raises(ValueError):
        main(["bench-gemm", "--size", "32", "--iters", "1"])


# ---- bench-net ----

def test_bench_net_report(capsys, mlp_model, mnist_dir):
    rep = run_json(capsys, ["bench-net", "--model", mlp_model, "--data-dir",
                            mnist_dir, "--iters", "3", "--json"])
    assert rep["task"] == "bench-net"
    assert rep["batch"] == 1
    assert rep["packed"]["mean_ms"] > 0
    assert rep["reference"]["mean_ms"] > 0
    assert rep["memory"]["reference"] > rep["memory"]["packed"]
    assert rep["memory_ratio"] == rep["memory"]["reference"] / rep["memory"]["packed"]


def test_bench_net_without_dataset(capsys, mlp_model):
    rep = run_json(capsys, ["bench-net", "--model", mlp_model, "--iters", "2", "--json"])
    assert rep["iterations"] == 2


# ---- inspect ----

def test_inspect_layer_table(capsys, mlp_model):
    rep = run_json(capsys, ["inspect", "--model", mlp_model, "--json"])
    assert rep["input_dims"] == [1, 1, 784]
    kinds = [row["kind"] for row in rep["layers"]]
    assert kinds == ["input8", "batchnorm", "dense", "batchnorm"]
    assert rep["workspace_bytes"] > 0
    assert rep["memory"]["packed_weights"] == 32 * 13 * 8 + 10 * 1 * 8


def test_inspect_text(capsys, mlp_model):
    assert main(["inspect", "--model", mlp_model]) == 0
    out = capsys.readouterr().out
    assert "input8" in out and "workspace" in out
