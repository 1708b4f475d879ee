"""Training loop and trainer-side evaluation.

The gradient is computed with the binary weights but accumulated into
float masters, which are clipped to [-1, 1] after every optimizer
step. Adam at lr 1e-3 with batch size 100 are documented conventions
here, not tuned values. Everything downstream of the seed is
deterministic, so one seed maps to one exported byte string.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch.nn import functional as F

from .export import inference_params
from .mnist import DataError, load_mnist
from .model import BinaryMLP

BATCH_SIZE = 100
LEARNING_RATE = 1e-3


@dataclass
class TrainState:
    """Float master weights plus batchnorm and optimizer state.

    weights[i] is the (units, inputLen) float32 master matrix of layer
    i, always inside [-1, 1]. norms[i] holds float32 running statistics
    and affine parameters keyed mean/var/gamma/beta plus a scalar eps.
    """

    arch: tuple
    input_dims: tuple  # (rows, cols, channels) of the byte input
    weights: list
    norms: list
    optimizer: dict = field(default_factory=dict)
    epochs_run: int = 0
    seed: int = 0


def _snapshot(model: BinaryMLP, input_dims, opt, epochs, seed) -> TrainState:
    weights = [lin.weight.detach().numpy().astype(np.float32).copy() for lin in model.linears]
    norms = []
    for bn in model.norms:
        norms.append({
            "mean": bn.running_mean.numpy().astype(np.float32).copy(),
            "var": bn.running_var.numpy().astype(np.float32).copy(),
            "gamma": bn.weight.detach().numpy().astype(np.float32).copy(),
            "beta": bn.bias.detach().numpy().astype(np.float32).copy(),
            "eps": float(bn.eps),
        })
    moments = {}
    if opt is not None:
        for idx, (_, slot) in enumerate(opt.state.items()):
            moments[idx] = {
                "step": int(slot["step"]),
                "exp_avg": slot["exp_avg"].numpy().copy(),
                "exp_avg_sq": slot["exp_avg_sq"].numpy().copy(),
            }
    return TrainState(
        arch=tuple(model.arch),
        input_dims=tuple(input_dims),
        weights=weights,
        norms=norms,
        optimizer=moments,
        epochs_run=epochs,
        seed=seed,
    )


def init_state(arch, seed: int, input_dims=(28, 28, 1)) -> TrainState:
    """An untrained state: seeded init weights, identity batchnorm stats."""
    torch.manual_seed(seed)
    model = BinaryMLP(arch)
    return _snapshot(model, input_dims, None, 0, seed)


def _torch_accuracy(model, images, labels) -> float:
    model.eval()
    hits = 0
    with torch.no_grad():
        for start in range(0, len(images), 1000):
            batch = images[start:start + 1000]
            hits += int((model(batch).argmax(dim=1) == labels[start:start + 1000]).sum())
    model.train()
    return hits / len(images)


def train_mlp(arch, epochs: int, seed: int, data_dir, progress=None) -> TrainState:
    """Fit a binarized MLP on the MNIST training split.

    progress, when given, is called after each epoch with
    (epoch, mean_loss, test_accuracy); skipping it also skips the
    per-epoch test pass.
    """
    arch = tuple(int(n) for n in arch)
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    train_x, train_y, test_x, test_y = load_mnist(data_dir)
    rows, cols = train_x.shape[1], train_x.shape[2]
    if rows * cols != arch[0]:
        raise DataError(f"arch expects {arch[0]} inputs but images have {rows}x{cols} pixels")

    torch.manual_seed(seed)
    model = BinaryMLP(arch)
    opt = torch.optim.Adam(model.parameters(), lr=LEARNING_RATE)

    xs = torch.from_numpy(train_x.reshape(len(train_x), -1).astype(np.float32) / 255)
    ys = torch.from_numpy(train_y.astype(np.int64))
    vx = torch.from_numpy(test_x.reshape(len(test_x), -1).astype(np.float32) / 255)
    vy = torch.from_numpy(test_y.astype(np.int64))

    shuffler = torch.Generator().manual_seed(seed)
    steps = len(xs) // BATCH_SIZE
    model.train()
    for epoch in range(epochs):
        perm = torch.randperm(len(xs), generator=shuffler)
        total = 0.0
        for step in range(steps):
            idx = perm[step * BATCH_SIZE:(step + 1) * BATCH_SIZE]
            opt.zero_grad()
            loss = F.cross_entropy(model(xs[idx]), ys[idx])
            loss.backward()
            opt.step()
            model.clip_weights()
            total += loss.item()
        if progress is not None:
            progress(epoch + 1, total / steps, _torch_accuracy(model, vx, vy))
    return _snapshot(model, (rows, cols, 1), opt, epochs, seed)


def evaluate(state: TrainState, images: np.ndarray, labels=None):
    """Score raw byte images exactly as the exported model would.

    Runs the exported-form parameters in float64: byte-domain first
    layer, sign(0) = +1 activations, final batchnorm scores. Returns
    (predictions, accuracy), accuracy None without labels. All
    accumulators are integer-exact in float64, so this matches the
    engine's arithmetic bit for bit.
    """
    x = images.reshape(len(images), -1).astype(np.float64)
    if x.shape[1] != state.arch[0]:
        raise DataError(f"images have {x.shape[1]} features, model expects {state.arch[0]}")
    weights, norms = inference_params(state)
    last = len(weights) - 1
    for i, (wb, (mean, var, gamma, beta, eps)) in enumerate(zip(weights, norms)):
        acc = x @ wb.astype(np.float64).T
        scale = gamma.astype(np.float64) / np.sqrt(var.astype(np.float64) + eps)
        y = (acc - mean.astype(np.float64)) * scale + beta.astype(np.float64)
        x = y if i == last else np.where(y >= 0, 1.0, -1.0)
    preds = np.argmax(x, axis=1)
    accuracy = None if labels is None else float(np.mean(preds == np.asarray(labels)))
    return preds, accuracy
