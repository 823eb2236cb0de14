"""Analytic-vs-numeric gradient verification harness.

forward_backward runs a user-supplied graph builder and returns outputs plus
exact reverse-mode gradients; finite_diff_check compares those gradients with
central finite differences parameter by parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from . import autograd as ag
from .layers import ParameterSet

DEFAULT_PERTURBATION = 1e-5


def forward_backward(graph_fn, params: ParameterSet, inputs: dict | None = None):
    """Evaluate a graph and its gradients.

    graph_fn(params, inputs) must return a dict of named Tensors including a
    scalar under the key "loss". Returns (output values, per-parameter grads).
    """
    consts = {name: ag.constant(v) for name, v in (inputs or {}).items()}
    params.zero_grad()
    outputs = graph_fn(params, consts)
    if "loss" not in outputs:
        raise ContractError("graph must designate a 'loss' output")
    loss = outputs["loss"]
    if loss.values.shape != ():
        raise ContractError(
            f"designated loss must be scalar, got shape {loss.values.shape}")
    ag.backward(loss)
    values = {name: t.values.copy() for name, t in outputs.items()}
    return values, params.grads()


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_parameter: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return not self.failures


def _rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def finite_diff_check(graph_fn, params: ParameterSet, inputs: dict | None = None,
                      tolerance: float = 1e-4, perturbation: float = DEFAULT_PERTURBATION,
                      max_coords_per_param: int = 48, seed: int = 0) -> GradCheckResult:
    """Compare analytic gradients against central differences.

    Large parameters are spot-checked on a seeded random subset of coordinates
    to keep the harness fast; small ones are checked exhaustively.
    """
    _, grads = forward_backward(graph_fn, params, inputs)
    consts = {name: ag.constant(v) for name, v in (inputs or {}).items()}

    def loss_value() -> float:
        out = graph_fn(params, consts)
        return float(out["loss"].values)

    rng = np.random.default_rng(seed)
    per_parameter: dict[str, float] = {}
    failures: list[str] = []
    for name, tensor in params.items():
        flat = tensor.values.reshape(-1)
        grad_flat = grads[name].reshape(-1)
        n = flat.size
        if n <= max_coords_per_param:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        worst = 0.0
        for i in coords:
            original = flat[i]
            flat[i] = original + perturbation
            upper = loss_value()
            flat[i] = original - perturbation
            lower = loss_value()
            flat[i] = original
            numeric = (upper - lower) / (2.0 * perturbation)
            worst = max(worst, _rel_error(float(grad_flat[i]), numeric))
        per_parameter[name] = worst
        if worst > tolerance:
            failures.append(name)
    overall = max(per_parameter.values()) if per_parameter else 0.0
    return GradCheckResult(max_rel_error=overall, per_parameter=per_parameter,
                           failures=failures, tolerance=tolerance)
