"""Adam optimizer with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DimensionError
from .layers import ParameterSet


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float
                   ) -> dict[str, np.ndarray]:
    """Scale the gradient set so its global L2 norm is at most max_norm."""
    if max_norm <= 0:
        return grads
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {name: g * scale for name, g in grads.items()}


class AdamState:
    """Per-parameter moment buffers plus the shared hyperparameters."""

    def __init__(self, params: ParameterSet, learning_rate: float,
                 weight_decay: float = 0.0, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = float(learning_rate)
        self.weight_decay = float(weight_decay)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.m = {name: np.zeros_like(t.values) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.values) for name, t in params.items()}


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """One in-place Adam update; weight decay is decoupled and scaled by lr."""
    for name in params.names():
        if name not in grads:
            raise ContractError(f"missing gradient for registered parameter '{name}'")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, tensor in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != tensor.values.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter '{name}' {tensor.values.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        update = m_hat / (np.sqrt(v_hat) + state.epsilon)
        if state.weight_decay:
            update = update + state.weight_decay * tensor.values
        tensor.values = tensor.values - state.learning_rate * update
