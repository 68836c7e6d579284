"""Reverse-mode autodiff on double-precision numpy arrays.

A Tensor wraps an ndarray plus an optional gradient. Operations record
their parents and a backward closure; `backward` on a scalar loss runs a
reverse topological sweep. Leaf gradients accumulate across backward
calls (zero them between optimizer steps); intermediate gradients are
overwritten per sweep and kept only for inspection.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import DimensionError

# When set, every op validates that its output is finite. Slow; meant for
# tests and debugging runs.
CHECK_FINITE = False


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else _scalar_error(self)

    def detach(self) -> "Tensor":
        return Tensor(self.values, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # ---- arithmetic -----------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __pow__(self, exponent):
        return pow_scalar(self, float(exponent))

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def _scalar_error(t: Tensor):
    raise DimensionError(f"expected a scalar tensor, got shape {t.shape}")


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _op(values: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite values produced in forward pass")
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


# ---- elementwise binaries ----------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    return _op(
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _op(
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _op(
        a.values * b.values,
        (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    return _op(
        a.values / b.values,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        ga = g @ np.swapaxes(b.values, -1, -2)
        gb = np.swapaxes(a.values, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _op(a.values @ b.values, (a, b), backward)


# ---- elementwise unaries ------------------------------------------------


def pow_scalar(a: Tensor, exponent: float) -> Tensor:
    vals = a.values**exponent
    return _op(vals, (a,), lambda g: (g * exponent * a.values ** (exponent - 1.0),))


def exp(a: Tensor) -> Tensor:
    vals = np.exp(a.values)
    return _op(vals, (a,), lambda g: (g * vals,))


def log(a: Tensor) -> Tensor:
    return _op(np.log(a.values), (a,), lambda g: (g / a.values,))


def sqrt(a: Tensor) -> Tensor:
    """Square root with subgradient 0 at exactly 0."""
    vals = np.sqrt(a.values)
    safe = np.where(vals == 0.0, np.inf, vals)
    return _op(vals, (a,), lambda g: (g * 0.5 / safe,))


def tanh(a: Tensor) -> Tensor:
    vals = np.tanh(a.values)
    return _op(vals, (a,), lambda g: (g * (1.0 - vals * vals),))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0.0
    return _op(a.values * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.values > 0.0, 1.0, slope)
    return _op(a.values * factor, (a,), lambda g: (g * factor,))


def absolute(a: Tensor) -> Tensor:
    """|x| with subgradient 0 at exactly 0."""
    sign = np.sign(a.values)
    return _op(np.abs(a.values), (a,), lambda g: (g * sign,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.values > lo) & (a.values < hi)
    return _op(np.clip(a.values, lo, hi), (a,), lambda g: (g * inside,))


# ---- reductions and shape ops -------------------------------------------


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    vals = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _op(vals, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _op(a.values.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)
    return _op(a.values.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def getitem(a: Tensor, key) -> Tensor:
    def backward(g):
        out = np.zeros_like(a.values)
        np.add.at(out, key, g)
        return (out,)

    return _op(a.values[key], (a,), backward)


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    vals = np.broadcast_to(a.values, shape).copy()
    return _op(vals, (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _op(np.concatenate([t.values for t in tensors], axis=axis), tuple(tensors), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    vals = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * vals).sum(axis=axis, keepdims=True)
        return (vals * (g - dot),)

    return _op(vals, (a,), backward)


# ---- spatial ops (NCHW) --------------------------------------------------


def _im2col(xp: np.ndarray, KH: int, KW: int, s: int, OH: int, OW: int) -> np.ndarray:
    """(B, Hp, Wp, C) -> GEMM-ready (B*OH*OW, KH*KW*C), contiguous."""
    B, _, _, C = xp.shape
    cols = np.empty((B, OH, OW, KH, KW, C))
    for di in range(KH):
        for dj in range(KW):
            cols[:, :, :, di, dj] = xp[:, di : di + s * OH : s, dj : dj + s * OW : s]
    return cols.reshape(B * OH * OW, KH * KW * C)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, channels-last (B, H, W, C), square kernel, weight
    laid out (KH, KW, IC, OC).

    im2col + one GEMM with no transposes; the column buffer is rebuilt in
    backward rather than captured, keeping live-graph memory small.
    """
    B, H, W, C = x.shape
    KH, KW, IC, OC = weight.shape
    if IC != C:
        raise DimensionError(f"conv2d channel mismatch: input {C}, weight {IC}")
    s, p = stride, padding
    xp = np.pad(x.values, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.values
    OH = (H + 2 * p - KH) // s + 1
    OW = (W + 2 * p - KW) // s + 1

    w_mat = weight.values.reshape(KH * KW * IC, OC)
    out = (_im2col(xp, KH, KW, s, OH, OW) @ w_mat).reshape(B, OH, OW, OC)
    if bias is not None:
        out += bias.values

    def backward(g):
        g_mat = g.reshape(B * OH * OW, OC)
        cols = _im2col(xp, KH, KW, s, OH, OW)
        grad_w = (cols.T @ g_mat).reshape(KH, KW, IC, OC)
        del cols
        grad_cols = (g_mat @ w_mat.T).reshape(B, OH, OW, KH, KW, IC)
        gxp = np.zeros_like(xp)
        for di in range(KH):
            for dj in range(KW):
                gxp[:, di : di + s * OH : s, dj : dj + s * OW : s] += grad_cols[:, :, :, di, dj]
        gx = gxp[:, p : p + H, p : p + W] if p else gxp
        grad_b = g_mat.sum(axis=0) if bias is not None else None
        return (gx, grad_w, grad_b)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    if bias is None:
        return _op(out, parents, lambda g: backward(g)[:2])
    return _op(out, parents, backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    B, H, W, C = x.shape
    vals = x.values.repeat(2, axis=1).repeat(2, axis=2)

    def backward(g):
        return (g.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4)),)

    return _op(vals, (x,), backward)


# ---- backward driver ------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Leaf tensors accumulate into `.grad`; intermediate `.grad`s are
    overwritten with the current sweep's value.
    """
    if loss.values.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(topo):
        g = acc.get(id(node))
        if g is None:
            continue
        if node._backward_fn is None:
            # leaf: accumulate across sweeps
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = acc.get(id(parent))
            acc[id(parent)] = pg if prev is None else prev + pg


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
