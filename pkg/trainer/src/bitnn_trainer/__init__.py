"""Training-side companion to the bitnn inference engine.

Trains small binarized MLPs on MNIST with straight-through sign
gradients and exports them in the engine's model file format. The two
packages share only that format and the engine's command line; nothing
here imports bitnn.
"""

from .export import export, inference_params, pack_rows, write_model
from .mnist import DataError, load_mnist, load_pair
from .train import TrainState, evaluate, init_state, train_mlp

__all__ = [
    "DataError",
    "TrainState",
    "evaluate",
    "export",
    "inference_params",
    "init_state",
    "load_mnist",
    "load_pair",
    "pack_rows",
    "train_mlp",
    "write_model",
]
