"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray plus the tape bookkeeping needed for exact
reverse-mode gradients. Constants and frozen parameters are pruned from the
tape, so inference-only passes carry almost no overhead. Every primitive
checks its output for NaN/Inf and raises NumericError naming itself.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DimensionError, NumericError


class Tensor:
    __slots__ = ("values", "grad", "op", "requires_grad", "_parents", "_backward")

    def __init__(self, values, op: str = "const", requires_grad: bool = False,
                 parents=(), backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.op = op
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.grad = None

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.values.shape})"

    # Convenience operator sugar; the named functions below are the API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def constant(values) -> Tensor:
    return Tensor(values, op="const")


def parameter(values) -> Tensor:
    return Tensor(values, op="param", requires_grad=True)


def _finite_or_raise(values: np.ndarray, op: str) -> None:
    # A NaN/Inf anywhere makes the sum non-finite; one reduction beats a full
    # isfinite scan on the hot path.
    if not np.isfinite(values.sum()):
        raise NumericError(f"non-finite values produced by primitive '{op}'")


def _node(values: np.ndarray, op: str, parents, backward) -> Tensor:
    _finite_or_raise(values, op)
    if any(p.requires_grad for p in parents):
        return Tensor(values, op=op, requires_grad=True,
                      parents=tuple(parents), backward=backward)
    return Tensor(values, op=op)


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.values)
    tensor.grad += grad


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss into .grad buffers."""
    if loss.values.shape != ():
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.values.shape}")
    if not loss.requires_grad:
        return
    # Iterative post-order DFS: parents land before children, so the reversed
    # order visits each node only after all of its consumers.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    loss.grad = np.ones(())
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (m,k)@(k,n) -> (m,n) or (m,k)@(k,) -> (m,)."""
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul shapes {av.shape} x {bv.shape}")
    out = av @ bv

    def bwd(g):
        if bv.ndim == 1:
            _accumulate(a, np.outer(g, bv))
            _accumulate(b, av.T @ g)
        else:
            _accumulate(a, g @ bv.T)
            _accumulate(b, av.T @ g)

    return _node(out, "matmul", (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {a.values.shape}")

    def bwd(g):
        _accumulate(a, g.T)

    return _node(a.values.T.copy(), "transpose", (a,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also supports (n,d) + (d,) row-broadcast bias."""
    av, bv = a.values, b.values
    if av.shape == bv.shape:
        def bwd(g):
            _accumulate(a, g)
            _accumulate(b, g)
    elif av.ndim == 2 and bv.shape == (av.shape[1],):
        def bwd(g):
            _accumulate(a, g)
            _accumulate(b, g.sum(axis=0))
    else:
        raise DimensionError(f"add shapes {av.shape} + {bv.shape}")
    return _node(av + bv, "add", (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise DimensionError(f"sub shapes {a.values.shape} - {b.values.shape}")

    def bwd(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _node(a.values - b.values, "sub", (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors (either may be scalar)."""
    av, bv = a.values, b.values
    if av.shape != bv.shape and av.shape != () and bv.shape != ():
        raise DimensionError(f"mul shapes {av.shape} * {bv.shape}")

    def bwd(g):
        ga = g * bv
        gb = g * av
        if av.shape == ():
            ga = ga.sum()
        if bv.shape == ():
            gb = gb.sum()
        _accumulate(a, ga)
        _accumulate(b, gb)

    return _node(av * bv, "mul", (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    def bwd(g):
        _accumulate(a, g * c)

    return _node(a.values * c, "scale", (a,), bwd)


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate 1-D vectors."""
    if not parts:
        raise DimensionError("concat of zero parts")
    for p in parts:
        if p.values.ndim != 1:
            raise DimensionError(f"concat expects vectors, got {p.values.shape}")
    sizes = [p.values.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[lo:hi])

    return _node(np.concatenate([p.values for p in parts]), "concat", tuple(parts), bwd)


def hstack_cols(parts: list[Tensor]) -> Tensor:
    """Concatenate matrices along columns (equal row counts)."""
    rows = parts[0].values.shape[0]
    for p in parts:
        if p.values.ndim != 2 or p.values.shape[0] != rows:
            raise DimensionError("hstack_cols expects matrices with equal rows")
    widths = [p.values.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[:, lo:hi])

    return _node(np.hstack([p.values for p in parts]), "hstack_cols", tuple(parts), bwd)


def stack_rows(parts: list[Tensor]) -> Tensor:
    """Stack 1-D vectors into an (n, d) matrix."""
    if not parts:
        raise DimensionError("stack_rows of zero parts")
    width = parts[0].values.shape
    for p in parts:
        if p.values.ndim != 1 or p.values.shape != width:
            raise DimensionError("stack_rows expects equal-length vectors")

    def bwd(g):
        for i, p in enumerate(parts):
            _accumulate(p, g[i])

    return _node(np.stack([p.values for p in parts]), "stack_rows", tuple(parts), bwd)


def slice1d(a: Tensor, start: int, stop: int) -> Tensor:
    if a.values.ndim != 1:
        raise DimensionError(f"slice1d expects a vector, got {a.values.shape}")

    def bwd(g):
        full = np.zeros_like(a.values)
        full[start:stop] = g
        _accumulate(a, full)

    return _node(a.values[start:stop].copy(), "slice1d", (a,), bwd)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.values.ndim != 2:
        raise DimensionError(f"slice_cols expects a matrix, got {a.values.shape}")

    def bwd(g):
        full = np.zeros_like(a.values)
        full[:, lo:hi] = g
        _accumulate(a, full)

    return _node(a.values[:, lo:hi].copy(), "slice_cols", (a,), bwd)


def row(a: Tensor, i: int) -> Tensor:
    if a.values.ndim != 2:
        raise DimensionError(f"row expects a matrix, got {a.values.shape}")

    def bwd(g):
        full = np.zeros_like(a.values)
        full[i] = g
        _accumulate(a, full)

    return _node(a.values[i].copy(), "row", (a,), bwd)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows by integer index array; gradient scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.values.ndim != 2:
        raise DimensionError(f"take_rows expects a matrix, got {a.values.shape}")

    def bwd(g):
        full = np.zeros_like(a.values)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _node(a.values[idx].copy(), "take_rows", (a,), bwd)


def element(a: Tensor, i: int) -> Tensor:
    """Scalar element of a vector."""
    if a.values.ndim != 1:
        raise DimensionError(f"element expects a vector, got {a.values.shape}")

    def bwd(g):
        full = np.zeros_like(a.values)
        full[i] = g
        _accumulate(a, full)

    return _node(np.asarray(a.values[i]), "element", (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0

    def bwd(g):
        _accumulate(a, g * mask)

    return _node(np.where(mask, a.values, 0.0), "relu", (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-a.values))

    def bwd(g):
        _accumulate(a, g * out * (1.0 - out))

    return _node(out, "sigmoid", (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)

    def bwd(g):
        _accumulate(a, g * (1.0 - out * out))

    return _node(out, "tanh", (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, g / a.values)

    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.values)
    return _node(out, "log", (a,), bwd)


def softmax(a: Tensor) -> Tensor:
    """Stable softmax over a 1-D vector."""
    if a.values.ndim != 1:
        raise DimensionError(f"softmax expects a vector, got {a.values.shape}")
    shifted = a.values - a.values.max()
    e = np.exp(shifted)
    out = e / e.sum()

    def bwd(g):
        _accumulate(a, out * (g - np.dot(g, out)))

    return _node(out, "softmax", (a,), bwd)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise stable softmax over a matrix."""
    if a.values.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got {a.values.shape}")
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        _accumulate(a, out * (g - dot))

    return _node(out, "softmax_rows", (a,), bwd)


def log_softmax(a: Tensor) -> Tensor:
    if a.values.ndim != 1:
        raise DimensionError(f"log_softmax expects a vector, got {a.values.shape}")
    shifted = a.values - a.values.max()
    lse = np.log(np.exp(shifted).sum())
    out = shifted - lse
    probs = np.exp(out)

    def bwd(g):
        _accumulate(a, g - probs * g.sum())

    return _node(out, "log_softmax", (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, np.full_like(a.values, float(g)))

    return _node(np.asarray(a.values.sum()), "sum", (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.values.size

    def bwd(g):
        _accumulate(a, np.full_like(a.values, float(g) / n))

    return _node(np.asarray(a.values.mean()), "mean", (a,), bwd)


def squared_distance(a: Tensor, b: Tensor) -> Tensor:
    """Squared Euclidean distance sum((a-b)^2) as a scalar."""
    if a.values.shape != b.values.shape:
        raise DimensionError(
            f"squared_distance shapes {a.values.shape} vs {b.values.shape}")
    diff = a.values - b.values

    def bwd(g):
        _accumulate(a, 2.0 * g * diff)
        _accumulate(b, -2.0 * g * diff)

    return _node(np.asarray((diff * diff).sum()), "squared_distance", (a, b), bwd)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits; targets are 0/1 constants."""
    t = np.asarray(targets, dtype=np.float64)
    z = logits.values
    if z.shape != t.shape:
        raise DimensionError(f"bce_with_logits shapes {z.shape} vs {t.shape}")
    # max(z,0) - z*t + log(1+exp(-|z|)) is stable for both signs of z.
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = max(z.size, 1)
    sig = 1.0 / (1.0 + np.exp(-z))

    def bwd(g):
        _accumulate(logits, float(g) * (sig - t) / n)

    return _node(np.asarray(per.mean()), "bce_with_logits", (logits,), bwd)


def cross_entropy_logits(logits: Tensor, target: int) -> Tensor:
    """Softmax cross-entropy of a 1-D logit vector against a class index."""
    if logits.values.ndim != 1:
        raise DimensionError("cross_entropy_logits expects a logit vector")
    if not 0 <= target < logits.values.shape[0]:
        raise DimensionError(f"target {target} out of range")
    shifted = logits.values - logits.values.max()
    lse = np.log(np.exp(shifted).sum())
    probs = np.exp(shifted - lse)

    def bwd(g):
        grad = probs.copy()
        grad[target] -= 1.0
        _accumulate(logits, float(g) * grad)

    return _node(np.asarray(lse - shifted[target]), "cross_entropy", (logits,), bwd)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalisation with learned gain/bias."""
    xv = x.values
    if xv.ndim != 2 or gain.values.shape != (xv.shape[1],) \
            or bias.values.shape != (xv.shape[1],):
        raise DimensionError("layer_norm_rows shape mismatch")
    mean = xv.mean(axis=1, keepdims=True)
    var = xv.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mean) * inv
    out = xhat * gain.values + bias.values

    def bwd(g):
        _accumulate(gain, (g * xhat).sum(axis=0))
        _accumulate(bias, g.sum(axis=0))
        gx = g * gain.values
        term = gx - gx.mean(axis=1, keepdims=True) \
            - xhat * (gx * xhat).mean(axis=1, keepdims=True)
        _accumulate(x, term * inv)

    return _node(out, "layer_norm", (x, gain, bias), bwd)
