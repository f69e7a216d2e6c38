"""Exception types shared across the package."""


class GaitLabError(Exception):
    """Base class for all package errors."""


class ContractViolation(GaitLabError, ValueError):
    """An operation was called with arguments violating its contract
    (shape mismatch, out-of-range label, invalid hyperparameter)."""


class DegenerateBatchError(ContractViolation):
    """Batch statistics requested on a batch of size 1."""


class DatasetError(GaitLabError):
    """Dataset directory, manifest or frame files are missing or malformed."""


class CheckpointError(GaitLabError):
    """Checkpoint file is missing, truncated or has a bad magic/layout."""


class ProtocolError(GaitLabError):
    """Evaluation protocol is invalid on the given dataset index."""


class NaNLossError(GaitLabError):
    """A loss component became non-finite during training.

    ``component`` names the offending term so the abort message can point
    at it directly.
    """

    def __init__(self, component: str, value: float):
        self.component = component
        self.value = value
        super().__init__(f"loss component '{component}' is non-finite ({value})")
