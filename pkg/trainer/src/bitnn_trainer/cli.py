"""Command line trainer: fit a binarized MLP on MNIST and export it.

Exit codes follow the engine's convention: 0 success, 1 usage errors,
2 unreadable or inconsistent data.
"""

from __future__ import annotations

import argparse
import json
import sys

from .export import export
from .mnist import DataError, load_mnist
from .train import BATCH_SIZE, LEARNING_RATE, evaluate, train_mlp


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def parse_arch(text: str) -> tuple:
    try:
        arch = tuple(int(part) for part in text.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad arch {text!r}, want sizes like 784-256-256-10")
    if len(arch) < 2 or min(arch) < 1:
        raise argparse.ArgumentTypeError(f"bad arch {text!r}, want at least two positive sizes")
    return arch


def _build() -> _Parser:
    p = _Parser(prog="bitnn-train", description=__doc__.splitlines()[0])
    p.add_argument("--arch", type=parse_arch, default=(784, 256, 256, 10),
                   help="layer sizes joined by dashes (default 784-256-256-10)")
    p.add_argument("--epochs", type=int, default=20, help="training epochs (default 20)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--data-dir", default="data", help="directory with MNIST IDX files (default data)")
    p.add_argument("--json", action="store_true", help="machine-readable final report")
    return p


def main(argv=None) -> int:
    try:
        args = _build().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    log = sys.stderr if args.json else sys.stdout

    def progress(epoch, loss, acc):
        print(f"epoch {epoch:3d}/{args.epochs}  loss {loss:.4f}  test accuracy {acc:.4f}",
              file=log, flush=True)

    try:
        state = train_mlp(args.arch, args.epochs, args.seed, args.data_dir,
                          progress=progress if args.epochs else None)
        _, _, test_x, test_y = load_mnist(args.data_dir)
        _, accuracy = evaluate(state, test_x, test_y)
        data = export(state, args.out)
    except DataError as exc:
        print(f"bitnn-train: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"bitnn-train: {exc}", file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps({
            "task": "train",
            "arch": list(args.arch),
            "epochs": args.epochs,
            "seed": args.seed,
            "batch_size": BATCH_SIZE,
            "learning_rate": LEARNING_RATE,
            "accuracy": accuracy,
            "out": args.out,
            "bytes": len(data),
        }))
    else:
        print(f"saved {args.out} ({len(data)} bytes), test accuracy {accuracy:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
