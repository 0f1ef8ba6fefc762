"""splitsem: desk-scale joint device-edge digital semantic communication.

A split classifier whose intermediate features are pruned, quantized
with learned non-linear levels, transmitted as bits over a binary
symmetric channel, and decoded under a distillation-based semantic
loss, with a policy network choosing the split point per input and
channel condition.
"""

from . import (
    channel,
    data,
    diffnet,
    errors,
    harness,
    policy,
    pruning,
    quantizer,
    semloss,
    splitmodel,
    trainer,
)
from ._backend import active_backend, use_backend

__version__ = "0.1.0"

__all__ = [
    "channel",
    "data",
    "diffnet",
    "errors",
    "harness",
    "policy",
    "pruning",
    "quantizer",
    "semloss",
    "splitmodel",
    "trainer",
    "active_backend",
    "use_backend",
    "__version__",
]
