"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter moment accumulators and shared hyperparameters."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)


def adam_update(param: Tensor, grad: np.ndarray, state: AdamState) -> None:
    """One bias-corrected Adam step, in place on ``param.data``."""
    if grad.shape != param.data.shape:
        raise ContractViolation(
            f"adam_update shape mismatch: param {param.data.shape} vs grad {grad.shape}")
    if state.m is None:
        state.m = np.zeros_like(param.data)
        state.v = np.zeros_like(param.data)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    param.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


class Adam:
    """Convenience wrapper applying :func:`adam_update` to a parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.states = {
            name: AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for name in params
        }

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None:
                adam_update(p, p.grad, self.states[name])

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
