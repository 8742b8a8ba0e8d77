"""Per-neuron activation selection with a straight-through Gumbel-Softmax.

Training runs in two phases.  In the selective phase every hidden neuron
samples one of six activations and learns logits over them.  The argmax
choices are then frozen, neurons are grouped by activation, and the
weights keep training with one activation kernel call per group.
"""

__version__ = "0.1.0"

from smartmixed.activations import ACTIVATION_NAMES, ActivationKind, ActivationParams
from smartmixed.grouped import ActivationAssignment, NetworkMixed, freeze, grouped_forward
from smartmixed.network import NetworkPhase1, forward, init_network
from smartmixed.tensor import BACKEND, Rng, matmul
from smartmixed.trainer import TrainConfig, run_training

__all__ = [
    "ACTIVATION_NAMES",
    "ActivationAssignment",
    "ActivationKind",
    "ActivationParams",
    "BACKEND",
    "NetworkMixed",
    "NetworkPhase1",
    "Rng",
    "TrainConfig",
    "__version__",
    "forward",
    "freeze",
    "grouped_forward",
    "init_network",
    "matmul",
    "run_training",
]
