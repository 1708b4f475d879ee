"""bitnn: CPU inference engine for binarized neural networks.

Weights and activations live in {-1, +1}, packed 64 elements to a
uint64 word, and matrix products run on XOR + popcount instead of
floating-point multiplies. A float32 reference backend computes the
same function for cross-checking.
"""

from .network import Backend, Network, classify, convert, forward, load, model_size, serialize
from .tensor import Axis, BitPlanes, FloatTensor, PackedTensor, bitplanes, linear_offset, pack, unpack

__version__ = "0.1.0"

__all__ = [
    "Axis",
    "Backend",
    "BitPlanes",
    "FloatTensor",
    "Network",
    "PackedTensor",
    "bitplanes",
    "classify",
    "convert",
    "forward",
    "linear_offset",
    "load",
    "model_size",
    "pack",
    "serialize",
    "unpack",
    "__version__",
]
