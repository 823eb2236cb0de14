"""Trainable layers built on the autograd primitives.

ParameterSet owns every learnable tensor under a unique path; layers register
their weights at construction time, so two runs with the same seed and the
same registration order start from bitwise-identical parameters.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError, DimensionError
from . import autograd as ag
from .autograd import Tensor


class ParameterSet:
    """Named map of parameter tensors plus the seeded generator that fills them."""

    def __init__(self, seed: int):
        self.rng_seed = int(seed)
        self.rng = np.random.default_rng(self.rng_seed)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple[int, ...], fan_in: int | None = None) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter '{name}' registered twice")
        if fan_in is None:
            fan_in = shape[-1] if shape else 1
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        values = self.rng.uniform(-bound, bound, size=shape)
        tensor = ag.parameter(values)
        self._params[name] = tensor
        return tensor

    def add_zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter '{name}' registered twice")
        tensor = ag.parameter(np.zeros(shape))
        self._params[name] = tensor
        return tensor

    def add_ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter '{name}' registered twice")
        tensor = ag.parameter(np.ones(shape))
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Collected gradients; parameters untouched by the tape get zeros."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.values))
            for name, t in self._params.items()
        }

    def set_trainable(self, trainable: bool) -> None:
        for t in self._params.values():
            t.requires_grad = trainable

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in state:
                raise ContractError(f"checkpoint missing parameter '{name}'")
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != t.values.shape:
                raise DimensionError(
                    f"parameter '{name}' shape {values.shape} != {t.values.shape}")
            t.values = values.copy()


class Linear:
    """y = W x + b with W of shape (n_out, n_in)."""

    def __init__(self, ps: ParameterSet, prefix: str, n_in: int, n_out: int):
        self.weight = ps.add(f"{prefix}/weight", (n_out, n_in), fan_in=n_in)
        self.bias = ps.add(f"{prefix}/bias", (n_out,), fan_in=n_in)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.add(ag.matmul(self.weight, x), self.bias)

    def apply_rows(self, x: Tensor) -> Tensor:
        """Apply to each row of an (n, n_in) matrix."""
        return ag.add(ag.matmul(x, ag.transpose(self.weight)), self.bias)


class FeedForward:
    """Two-layer MLP with ReLU: n_in -> n_hidden -> n_out."""

    def __init__(self, ps: ParameterSet, prefix: str, n_in: int, n_hidden: int, n_out: int):
        self.fc1 = Linear(ps, f"{prefix}/fc1", n_in, n_hidden)
        self.fc2 = Linear(ps, f"{prefix}/fc2", n_hidden, n_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.relu(self.fc1(x)))

    def apply_rows(self, x: Tensor) -> Tensor:
        return self.fc2.apply_rows(ag.relu(self.fc1.apply_rows(x)))


class LstmCell:
    """Standard gated recurrent cell; gate order (input, forget, cell, output)."""

    def __init__(self, ps: ParameterSet, prefix: str, n_in: int, n_hidden: int):
        self.n_hidden = n_hidden
        self.wx = ps.add(f"{prefix}/wx", (4 * n_hidden, n_in), fan_in=n_in)
        self.wh = ps.add(f"{prefix}/wh", (4 * n_hidden, n_hidden), fan_in=n_hidden)
        self.bias = ps.add(f"{prefix}/bias", (4 * n_hidden,), fan_in=n_hidden)

    def __call__(self, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        return lstm_step(x, h_prev, c_prev, self)

    def zero_state(self) -> tuple[Tensor, Tensor]:
        zeros = np.zeros(self.n_hidden)
        return ag.constant(zeros), ag.constant(zeros)


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, cell: LstmCell) -> tuple[Tensor, Tensor]:
    """One recurrent update; differentiable through inputs and parameters."""
    h = cell.n_hidden
    if h_prev.values.shape != (h,) or c_prev.values.shape != (h,):
        raise DimensionError(
            f"lstm_step state shapes {h_prev.values.shape}/{c_prev.values.shape}"
            f" incompatible with hidden size {h}")
    if x.values.shape != (cell.wx.values.shape[1],):
        raise DimensionError(
            f"lstm_step input shape {x.values.shape} incompatible with"
            f" weight {cell.wx.values.shape}")
    z = ag.add(ag.add(ag.matmul(cell.wx, x), ag.matmul(cell.wh, h_prev)), cell.bias)
    gate_i = ag.sigmoid(ag.slice1d(z, 0, h))
    gate_f = ag.sigmoid(ag.slice1d(z, h, 2 * h))
    gate_g = ag.tanh(ag.slice1d(z, 2 * h, 3 * h))
    gate_o = ag.sigmoid(ag.slice1d(z, 3 * h, 4 * h))
    c = ag.add(ag.mul(gate_f, c_prev), ag.mul(gate_i, gate_g))
    h_new = ag.mul(gate_o, ag.tanh(c))
    return h_new, c


class TransformerLayer:
    """Post-norm transformer encoder layer (multi-head self-attention + FFN)."""

    def __init__(self, ps: ParameterSet, prefix: str, dim: int, n_heads: int, ffn_dim: int):
        if dim % n_heads != 0:
            raise DimensionError(f"dim {dim} not divisible by heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.wq = Linear(ps, f"{prefix}/wq", dim, dim)
        self.wk = Linear(ps, f"{prefix}/wk", dim, dim)
        self.wv = Linear(ps, f"{prefix}/wv", dim, dim)
        self.wo = Linear(ps, f"{prefix}/wo", dim, dim)
        self.ffn = FeedForward(ps, f"{prefix}/ffn", dim, ffn_dim, dim)
        self.ln1_gain = ps.add_ones(f"{prefix}/ln1_gain", (dim,))
        self.ln1_bias = ps.add_zeros(f"{prefix}/ln1_bias", (dim,))
        self.ln2_gain = ps.add_ones(f"{prefix}/ln2_gain", (dim,))
        self.ln2_bias = ps.add_zeros(f"{prefix}/ln2_bias", (dim,))

    def __call__(self, seq: Tensor, return_attention: bool = False):
        return transformer_encoder_layer(seq, self, return_attention)


def transformer_encoder_layer(seq: Tensor, layer: TransformerLayer,
                              return_attention: bool = False):
    """Self-attention + positionwise FFN over an (n, d) sequence.

    Returns the (n, d) output, or (output, list of per-head attention
    matrices) when return_attention is set.
    """
    values = seq.values
    if values.ndim != 2:
        raise DimensionError(f"encoder layer expects (n, d), got {values.shape}")
    n, d = values.shape
    if n == 0:
        raise DimensionError("encoder layer received an empty sequence")
    if d != layer.dim:
        raise DimensionError(f"sequence width {d} != layer dim {layer.dim}")

    q = layer.wq.apply_rows(seq)
    k = layer.wk.apply_rows(seq)
    v = layer.wv.apply_rows(seq)
    inv_sqrt = 1.0 / math.sqrt(layer.head_dim)
    heads = []
    attentions = []
    for h in range(layer.n_heads):
        lo, hi = h * layer.head_dim, (h + 1) * layer.head_dim
        qh = ag.slice_cols(q, lo, hi)
        kh = ag.slice_cols(k, lo, hi)
        vh = ag.slice_cols(v, lo, hi)
        scores = ag.scale(ag.matmul(qh, ag.transpose(kh)), inv_sqrt)
        attn = ag.softmax_rows(scores)
        attentions.append(attn)
        heads.append(ag.matmul(attn, vh))
    merged = heads[0] if len(heads) == 1 else ag.hstack_cols(heads)
    attended = layer.wo.apply_rows(merged)
    x1 = ag.layer_norm_rows(ag.add(seq, attended), layer.ln1_gain, layer.ln1_bias)
    x2 = ag.layer_norm_rows(ag.add(x1, layer.ffn.apply_rows(x1)),
                            layer.ln2_gain, layer.ln2_bias)
    if return_attention:
        return x2, attentions
    return x2


class Embedding:
    """Lookup table of (n_rows, dim) with scatter-add gradients."""

    def __init__(self, ps: ParameterSet, prefix: str, n_rows: int, dim: int):
        self.table = ps.add(f"{prefix}/table", (n_rows, dim), fan_in=dim)

    def lookup(self, ids) -> Tensor:
        return ag.take_rows(self.table, ids)

    def row(self, i: int) -> Tensor:
        return ag.row(self.table, i)
