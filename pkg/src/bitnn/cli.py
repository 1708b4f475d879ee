"""Command-line front end: classify, bench-gemm, bench-net, inspect.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
malformed model/dataset files). All output is deterministic for fixed
inputs, timings aside; classification results do not depend on
--threads.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bench import bench_gemm, bench_net
from .datasets import DatasetError, discover
from .modelfile import (
    BatchNormRecord,
    ConvRecord,
    DenseRecord,
    Input8Record,
    MaxPoolRecord,
    ModelFormatError,
    ModelValidationError,
    load_model,
)
from .network import Backend, Network, forward, model_size


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse defaults to exit code 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _build() -> argparse.ArgumentParser:
    p = _Parser(prog="bitnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp, model=False, data=False, backend=False, iters=False):
        if model:
            sp.add_argument("--model", required=True, help="model file path")
        if data:
            sp.add_argument("--data-dir", help="directory holding MNIST IDX or CIFAR-10 binary files")
        if backend:
            sp.add_argument("--backend", choices=["reference", "packed"],
                            default="packed")
        if iters:
            sp.add_argument("--iters", type=int, default=100,
                            help="timed iterations (default 100)")
        sp.add_argument("--threads", type=int, help="compute thread cap")
        sp.add_argument("--json", action="store_true", help="machine-readable report")

    sp = sub.add_parser("classify", help="run a model over a dataset")
    common(sp, model=True, data=True, backend=True)
    sp.add_argument("--limit", type=int, help="classify only the first N images")
    sp.set_defaults(fn=cmd_classify)

    sp = sub.add_parser("bench-gemm", help="binary vs float matrix multiply timing")
    common(sp, iters=True)
    sp.add_argument("--size", type=int, default=4096, help="square size (default 4096)")
    sp.set_defaults(fn=cmd_bench_gemm)

    sp = sub.add_parser("bench-net", help="per-image forward timing, both backends")
    common(sp, model=True, data=True, iters=True)
    sp.set_defaults(fn=cmd_bench_net)

    sp = sub.add_parser("inspect", help="print the layer table and sizes")
    common(sp, model=True)
    sp.set_defaults(fn=cmd_inspect)
    return p


def _set_threads(n):
    if n is None:
        return
    import numba
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def _model_input(net: Network, img: np.ndarray) -> np.ndarray:
    if img.shape == net.input_dims:
        return img
    h, w, c = net.input_dims
    if img.size == h * w * c:
        return img.reshape(-1)
    raise DatasetError(
        f"image shape {img.shape} does not fit model input {net.input_dims}")


def cmd_classify(args) -> int:
    net = Network(load_model(args.model), Backend(args.backend))
    source = discover(args.data_dir) if args.data_dir else None
    if source is None:
        raise DatasetError("classify needs --data-dir")
    images = source.images[:args.limit] if args.limit else source.images
    predictions = np.empty(images.shape[0], dtype=np.int64)
    for i in range(images.shape[0]):
        x = _model_input(net, images[i])
        predictions[i] = int(np.argmax(forward(net, x)))
    correct = None
    accuracy = None
    if source.labels is not None:
        labels = source.labels[:images.shape[0]]
        correct = int(np.sum(predictions == labels))
        accuracy = correct / images.shape[0]
    if args.json:
        print(json.dumps({
            "task": "classify",
            "model": args.model,
            "backend": args.backend,
            "dataset": source.kind,
            "count": int(images.shape[0]),
            "predictions": predictions.tolist(),
            "correct": correct,
            "accuracy": accuracy,
        }))
    else:
        line = f"classified {images.shape[0]} {source.kind} images ({args.backend} backend)"
        if accuracy is not None:
            line += f", accuracy {accuracy:.2%} ({correct}/{images.shape[0]})"
        print(line)
    return 0


def cmd_bench_gemm(args) -> int:
    report = bench_gemm(size=args.size, iters=args.iters)
    if args.json:
        print(json.dumps(report))
    else:
        print(f"bgemm {args.size}x{args.size}x{args.size}, {args.iters} iterations")
        for kind in ("packed", "reference"):
            r = report[kind]
            print(f"  {kind:9s} mean {r['mean_ms']:9.2f} ms  median {r['median_ms']:9.2f} ms"
                  f"  min {r['min_ms']:9.2f} ms  weights {r['weight_bytes']} B")
        print(f"  speedup   {report['ratio']:.2f}x  checksum {report['checksum']}")
    return 0


def cmd_bench_net(args) -> int:
    spec = load_model(args.model)
    if args.data_dir:
        image = discover(args.data_dir).images[0]
        net = Network(spec)
        image = np.ascontiguousarray(_model_input(net, image))
    else:
        h, w, c = spec.input_dims
        image = np.random.default_rng(0).integers(0, 256, (h, w, c), dtype=np.uint8)
    report = bench_net(spec, image, iters=args.iters)
    report["model"] = args.model
    if args.json:
        print(json.dumps(report))
    else:
        print(f"forward pass, batch 1, {args.iters} iterations")
        for kind in ("packed", "reference"):
            r = report[kind]
            print(f"  {kind:9s} mean {r['mean_ms']:9.3f} ms  min {r['min_ms']:9.3f} ms"
                  f"  weights {r['weight_bytes']} B")
        print(f"  time ratio {report['ratio']:.2f}x  "
              f"memory ratio {report['memory_ratio']:.2f}x")
    return 0


def _layer_row(i, rec):
    if isinstance(rec, Input8Record):
        return {"index": i, "kind": "input8", "in": rec.input_len, "out": rec.units}
    if isinstance(rec, DenseRecord):
        return {"index": i, "kind": "dense", "in": rec.input_len, "out": rec.units}
    if isinstance(rec, ConvRecord):
        return {"index": i, "kind": "conv", "filters": rec.filters,
                "kernel": [rec.kh, rec.kw, rec.in_channels],
                "stride": rec.stride, "pad": rec.pad}
    if isinstance(rec, MaxPoolRecord):
        return {"index": i, "kind": "maxpool", "window": [rec.ph, rec.pw],
                "stride": rec.stride}
    if isinstance(rec, BatchNormRecord):
        return {"index": i, "kind": "batchnorm", "channels": rec.channels}
    raise ModelValidationError(f"layer {i}: unknown record {rec!r}")


def cmd_inspect(args) -> int:
    spec = load_model(args.model)
    net = Network(spec)  # compile check; also sizes the workspace
    rows = [_layer_row(i, rec) for i, rec in enumerate(spec.records)]
    sizes = model_size(spec)
    if args.json:
        print(json.dumps({
            "task": "inspect",
            "model": args.model,
            "input_dims": list(spec.input_dims),
            "layers": rows,
            "memory": sizes,
            "workspace_bytes": net.workspace.total_bytes,
        }))
    else:
        h, w, c = spec.input_dims
        print(f"{args.model}: input {h}x{w}x{c}, {len(rows)} layers")
        for row in rows:
            detail = ", ".join(f"{k} {v}" for k, v in row.items()
                               if k not in ("index", "kind"))
            print(f"  [{row['index']:2d}] {row['kind']:9s} {detail}")
        print(f"  weights: packed {sizes['packed']} B, reference {sizes['reference']} B")
        print(f"  workspace: {net.workspace.total_bytes} B")
    return 0


def main(argv=None) -> int:
    try:
        args = _build().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _set_threads(args.threads)
    try:
        return args.fn(args)
    except (DatasetError, ModelFormatError, ModelValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
