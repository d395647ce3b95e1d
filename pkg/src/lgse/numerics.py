"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Everything downstream (positional-encoding biases, the Transformer, training)
computes on these tensors. The design is deliberately small: row-major float64
data, 0/1/2-D ops, and a backward pass over a topologically ordered tape.
Broadcasting is limited to what the model needs (scalars and row vectors).
"""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "ContractError",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "absolute",
    "reduce_sum",
    "reduce_mean",
    "softmax_rows",
    "layer_norm_frames",
    "take",
    "concat_cols",
    "reshape",
    "rotate_pairs",
    "trace",
    "backward",
    "finite_difference",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """An operation was invoked outside its contract."""


class Tensor:
    """N-dimensional float64 array participating in the gradient tape.

    `grad` is populated by `backward` for tensors with `requires_grad=True`
    and accumulates across calls; callers zero it by assigning None.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        return reduce_sum(self)

    def mean(self) -> "Tensor":
        return reduce_mean(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def constant(data) -> Tensor:
    """Wrap an array-like as a non-trainable tensor."""
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    """Wrap an array-like as a trainable tensor."""
    return Tensor(data, requires_grad=True)


def _promote(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor],
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape))
                 if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    data = a.data + b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    data = a.data - b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    data = a.data * b.data

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    data = a.data / b.data

    def back(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(data, (a, b), back)


def neg(a) -> Tensor:
    a = _promote(a)

    def back(g):
        _accumulate(a, -g)

    return _node(-a.data, (a,), back)


def matmul(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul requires (m,k)@(k,n); got {a.shape} and {b.shape}")
    data = a.data @ b.data

    def back(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(data, (a, b), back)


def transpose(a) -> Tensor:
    a = _promote(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got {a.shape}")

    def back(g):
        _accumulate(a, g.T)

    return _node(a.data.T.copy(), (a,), back)


def relu(a) -> Tensor:
    a = _promote(a)
    mask = a.data > 0.0

    def back(g):
        _accumulate(a, g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), back)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _promote(a)
    s = _stable_sigmoid(a.data)

    def back(g):
        _accumulate(a, g * s * (1.0 - s))

    return _node(s, (a,), back)


def exp(a) -> Tensor:
    a = _promote(a)
    e = np.exp(a.data)

    def back(g):
        _accumulate(a, g * e)

    return _node(e, (a,), back)


def log(a) -> Tensor:
    """Natural log; the caller guarantees strictly positive input."""
    a = _promote(a)

    def back(g):
        _accumulate(a, g / a.data)

    return _node(np.log(a.data), (a,), back)


def absolute(a) -> Tensor:
    """|x| with sign subgradient (0 at the kink)."""
    a = _promote(a)
    s = np.sign(a.data)

    def back(g):
        _accumulate(a, g * s)

    return _node(np.abs(a.data), (a,), back)


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = _promote(a)
    data = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _node(data, (a,), back)


def reduce_mean(a, axis: int | None = None) -> Tensor:
    a = _promote(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / n)


def softmax_rows(a) -> Tensor:
    """Row-wise softmax of a 2-D tensor, computed with max subtraction.

    Every output row sums to 1 (within float rounding) for finite input.
    """
    a = _promote(a)
    if a.data.ndim != 2:
        raise DimensionError(f"softmax_rows expects a 2-D tensor, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        inner = (g * s).sum(axis=1, keepdims=True)
        _accumulate(a, s * (g - inner))

    return _node(s, (a,), back)


def layer_norm_frames(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each row (frame) to zero mean / unit variance, then affine."""
    x, gain, bias = _promote(x), _promote(gain), _promote(bias)
    if x.data.ndim != 2 or x.shape[1] < 2:
        raise DimensionError(
            f"layer_norm_frames expects (L,d) with d >= 2, got {x.shape}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = xhat * gain.data + bias.data

    def back(g):
        _accumulate(bias, g.sum(axis=0))
        _accumulate(gain, (g * xhat).sum(axis=0))
        dxhat = g * gain.data
        # Standard layer-norm backward, all reductions along the frame axis.
        gx = (dxhat - dxhat.mean(axis=1, keepdims=True)
              - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)) * inv_std
        _accumulate(x, gx)

    return _node(data, (x, gain, bias), back)


def take(a, idx) -> Tensor:
    """Gather `a.data[idx]`; backward scatter-adds into the source.

    `idx` may be an int, a tuple of ints, or an integer ndarray; it is not a
    differentiable input.
    """
    a = _promote(a)
    data = np.asarray(a.data[idx], dtype=np.float64)

    def back(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            _accumulate(a, ga)

    return _node(data.copy(), (a,), back)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors with equal row counts along columns."""
    parts = [_promote(p) for p in parts]
    widths = [p.shape[1] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=1)

    def back(g):
        offset = 0
        for p, w in zip(parts, widths):
            _accumulate(p, g[:, offset:offset + w])
            offset += w

    return _node(data, parts, back)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _promote(a)
    orig = a.shape

    def back(g):
        _accumulate(a, g.reshape(orig))

    return _node(a.data.reshape(shape).copy(), (a,), back)


def rotate_pairs(x) -> Tensor:
    """Map adjacent column pairs (a, b) to (-b, a); the 90-degree pair rotation."""
    x = _promote(x)
    if x.data.ndim != 2 or x.shape[1] % 2 != 0:
        raise DimensionError(
            f"rotate_pairs expects (L,d) with even d, got {x.shape}")
    data = np.empty_like(x.data)
    data[:, 0::2] = -x.data[:, 1::2]
    data[:, 1::2] = x.data[:, 0::2]

    def back(g):
        gx = np.empty_like(g)
        gx[:, 1::2] = -g[:, 0::2]
        gx[:, 0::2] = g[:, 1::2]
        _accumulate(x, gx)

    return _node(data, (x,), back)


def trace(root: Tensor) -> list[Tensor]:
    """Tape for `root`: reachable nodes with every parent before its consumer."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate `grad` on every trainable tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.shape}")
    order = trace(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def finite_difference(f: Callable[[np.ndarray], float], x0: np.ndarray,
                      step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2.0 * step)
    return g
