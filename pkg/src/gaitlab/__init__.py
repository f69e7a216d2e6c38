"""Desk-scale gait recognition lab.

Disentangles per-frame appearance and pose features with an autoencoder,
aggregates pose dynamics into a clip-level gait feature with a stacked LSTM,
and evaluates identification on procedurally generated walker videos.
"""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad
from .errors import (
    GaitLabError,
    ContractViolation,
    DegenerateBatchError,
    DatasetError,
    CheckpointError,
    ProtocolError,
    NaNLossError,
)

__all__ = [
    "Tensor",
    "no_grad",
    "GaitLabError",
    "ContractViolation",
    "DegenerateBatchError",
    "DatasetError",
    "CheckpointError",
    "ProtocolError",
    "NaNLossError",
    "__version__",
]
