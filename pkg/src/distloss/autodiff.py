"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation returns a :class:`DiffArray` holding its value, a lazily
allocated gradient buffer, and back-references to its parents.  Calling
:func:`backward` on a scalar node walks the graph once in reverse topological
order and accumulates gradients into every node that requires them.

Sequence tensors use a channels-last ``(batch, length, channels)`` layout.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import softsort as _softsort


class AutodiffError(RuntimeError):
    pass


class NonScalarLoss(AutodiffError):
    pass


class DoubleBackward(AutodiffError):
    pass


class ShapeMismatch(ValueError):
    pass


class DiffArray:
    """A node in a reverse-mode computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward", "_done")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        name: str | None = None,
        parents: Sequence["DiffArray"] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.value = np.asarray(value)
        if self.value.dtype.kind != "f":
            self.value = self.value.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name
        self._parents = tuple(parents)
        self._backward = backward
        self._done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffArray(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.value

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_diff(x, dtype=None) -> DiffArray:
    if isinstance(x, DiffArray):
        return x
    arr = np.asarray(x, dtype=dtype)
    return DiffArray(arr)


def parameter(value, name: str | None = None) -> DiffArray:
    return DiffArray(np.array(value, copy=True), requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[DiffArray, DiffArray]:
    # constants adopt the dtype of the node they combine with
    if isinstance(a, DiffArray) and not isinstance(b, DiffArray):
        b = DiffArray(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, DiffArray) and not isinstance(a, DiffArray):
        a = DiffArray(np.asarray(a, dtype=b.dtype))
    return as_diff(a), as_diff(b)


def add(a, b) -> DiffArray:
    a, b = _pair(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return DiffArray(a.value + b.value, parents=(a, b), backward=bw)


def sub(a, b) -> DiffArray:
    a, b = _pair(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return DiffArray(a.value - b.value, parents=(a, b), backward=bw)


def mul(a, b) -> DiffArray:
    a, b = _pair(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.shape))

    return DiffArray(a.value * b.value, parents=(a, b), backward=bw)


def matmul(a: DiffArray, b: DiffArray) -> DiffArray:
    """2-D matrix product."""
    a, b = _pair(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.value.T)
        if b.requires_grad:
            b._accumulate(a.value.T @ g)

    return DiffArray(a.value @ b.value, parents=(a, b), backward=bw)


def dense(x: DiffArray, weight: DiffArray, bias: DiffArray | None = None) -> DiffArray:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def relu(x: DiffArray) -> DiffArray:
    mask = x.value > 0

    def bw(g):
        x._accumulate(g * mask)

    return DiffArray(np.maximum(x.value, 0), parents=(x,), backward=bw)


def sigmoid(x: DiffArray) -> DiffArray:
    v = x.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def bw(g):
        x._accumulate(g * out * (1.0 - out))

    return DiffArray(out, parents=(x,), backward=bw)


def absolute(x: DiffArray) -> DiffArray:
    # sign(0) == 0 gives the zero subgradient at the kink
    sign = np.sign(x.value)

    def bw(g):
        x._accumulate(g * sign)

    return DiffArray(np.abs(x.value), parents=(x,), backward=bw)


def square(x: DiffArray) -> DiffArray:
    def bw(g):
        x._accumulate(2.0 * g * x.value)

    return DiffArray(x.value * x.value, parents=(x,), backward=bw)


def sum_(x: DiffArray, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> DiffArray:
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return DiffArray(out, parents=(x,), backward=bw)


def mean(x: DiffArray, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> DiffArray:
    if axis is None:
        count = x.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: DiffArray, shape: tuple[int, ...]) -> DiffArray:
    def bw(g):
        x._accumulate(g.reshape(x.shape))

    return DiffArray(x.value.reshape(shape), parents=(x,), backward=bw)


def transpose(x: DiffArray, axes: tuple[int, ...]) -> DiffArray:
    inverse = tuple(np.argsort(axes))

    def bw(g):
        x._accumulate(g.transpose(inverse))

    return DiffArray(x.value.transpose(axes), parents=(x,), backward=bw)


def conv1d(x: DiffArray, weight: DiffArray, bias: DiffArray | None = None) -> DiffArray:
    """'Same'-padded, stride-1 convolution (cross-correlation).

    x: (batch, length, c_in); weight: (kernel, c_in, c_out); bias: (c_out,).
    The kernel size must be odd.
    """
    B, L, c_in = x.shape
    K, w_in, c_out = weight.shape
    if w_in != c_in:
        raise ShapeMismatch(f"conv1d input has {c_in} channels, kernel expects {w_in}")
    if K % 2 != 1:
        raise ShapeMismatch("conv1d kernel size must be odd")
    pad = K // 2
    xp = np.pad(x.value, ((0, 0), (pad, pad), (0, 0)))
    w = weight.value
    if c_in == 1:
        # one input channel: a single (B*L, K) @ (K, c_out) product beats K thin ones
        cols = sliding_window_view(xp[:, :, 0], K, axis=1).reshape(B * L, K)
        out = cols @ w[:, 0, :]
    else:
        out = np.zeros((B * L, c_out), dtype=x.dtype)
        for k in range(K):
            out += xp[:, k:k + L, :].reshape(B * L, c_in) @ w[k]
    out = out.reshape(B, L, c_out)
    if bias is not None:
        out += bias.value

    def bw(g):
        g2 = g.reshape(B * L, c_out)
        if weight.requires_grad:
            if c_in == 1:
                gw = (cols.T @ g2)[:, None, :]
            else:
                gw = np.empty_like(w)
                for k in range(K):
                    gw[k] = xp[:, k:k + L, :].reshape(B * L, c_in).T @ g2
            weight._accumulate(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k:k + L, :] += (g2 @ w[k].T).reshape(B, L, c_in)
            x._accumulate(gxp[:, pad:pad + L, :])
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return DiffArray(out, parents=parents, backward=bw)


def avg_pool1d(x: DiffArray, factor: int) -> DiffArray:
    """Non-overlapping average pooling along the length axis of (B, L, C)."""
    B, L, C = x.shape
    if L % factor:
        raise ShapeMismatch(f"length {L} not divisible by pool factor {factor}")
    out = x.value.reshape(B, L // factor, factor, C).mean(axis=2)

    def bw(g):
        x._accumulate(np.repeat(g / factor, factor, axis=1))

    return DiffArray(out, parents=(x,), backward=bw)


def soft_sort(x: DiffArray, epsilon: float = 1.0, direction: str = "ascending") -> DiffArray:
    """Differentiable sort of a 1-D node."""
    if x.value.ndim != 1:
        raise ShapeMismatch("soft_sort expects a 1-D array")
    cfg = _softsort.SoftSortConfig(epsilon=epsilon, direction=direction)
    values64 = x.value.astype(np.float64)
    out, perm, sizes = _softsort._forward(values64, cfg)

    def bw(g):
        x._accumulate(_softsort._vjp_from_partition(g.astype(np.float64), perm, sizes))

    return DiffArray(out.astype(x.dtype), parents=(x,), backward=bw)


def _topological_order(root: DiffArray) -> list[DiffArray]:
    order: list[DiffArray] = []
    seen: set[int] = set()
    stack: list[tuple[DiffArray, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: DiffArray) -> None:
    """Populate ``.grad`` on every node reachable from ``loss``.

    Raises NonScalarLoss for multi-element roots and DoubleBackward if the
    same graph is traversed twice.
    """
    if loss.value.size != 1:
        raise NonScalarLoss(f"backward needs a single-element loss, got shape {loss.shape}")
    if loss._done:
        raise DoubleBackward("backward already ran on this graph; rebuild it with a new forward pass")
    if not loss.requires_grad:
        loss._done = True
        return
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    loss._done = True


def zero_grad(params: Iterable[DiffArray]) -> None:
    for p in params:
        p.grad = None
