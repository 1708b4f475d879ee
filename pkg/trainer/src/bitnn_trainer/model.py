"""Binarized MLP with straight-through sign gradients.

Forward passes see only binarized weights and activations; the float
master weights exist for the optimizer. The sign derivative is taken
as 1 where the float argument satisfies |x| <= 1 and 0 elsewhere, the
usual straight-through estimator. The first layer consumes the real
pixel intensities (scaled to [0, 1]) rather than a binarized input,
matching the engine's byte input layer, and the last layer emits raw
batchnorm outputs as class scores.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F


class _SignSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        # sign(0) = +1, same convention the engine packs by
        return torch.where(x >= 0, torch.ones_like(x), -torch.ones_like(x))

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * (x.abs() <= 1)


def binary_sign(x):
    """Binarize to +/-1 with the straight-through gradient."""
    return _SignSTE.apply(x)


class BinaryMLP(nn.Module):
    """Stack of (binary linear, batchnorm, sign) blocks, sign dropped on the last."""

    def __init__(self, arch):
        super().__init__()
        arch = tuple(int(n) for n in arch)
        if len(arch) < 2 or min(arch) < 1:
            raise ValueError(f"arch needs at least two positive sizes, got {arch}")
        self.arch = arch
        self.linears = nn.ModuleList(
            nn.Linear(k, m, bias=False) for k, m in zip(arch, arch[1:])
        )
        self.norms = nn.ModuleList(nn.BatchNorm1d(m) for m in arch[1:])

    def forward(self, x):
        last = len(self.linears) - 1
        for i, (lin, bn) in enumerate(zip(self.linears, self.norms)):
            x = bn(F.linear(x, binary_sign(lin.weight)))
            if i < last:
                x = binary_sign(x)
        return x

    @torch.no_grad()
    def clip_weights(self):
        # keeps the float masters in [-1, 1]; growth past that range
        # cannot change the binarized weights anyway
        for lin in self.linears:
            lin.weight.clamp_(-1.0, 1.0)
