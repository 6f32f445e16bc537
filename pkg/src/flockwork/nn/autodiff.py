"""Minimal reverse-mode automatic differentiation over numpy arrays.

A recorded computation graph of exactly the operations the workbench models
need: batched matmul, broadcast add/mul, relu, row softmax, layer norm,
shape ops, and reductions. Gradients accumulate into ``Tensor.grad`` and are
reset with ``zero_grad``; dtype follows the inputs, so the same graph runs
in float32 for training and float64 for gradient checks.
"""
from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / rollouts)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be scalar. Repeated calls re-accumulate into leaves;
        interior node grads are transient and cleared on each call.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor with no recorded graph")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))
        for node in topo:
            if node._parents:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    # First contribution adopts g; later ones allocate a fresh sum, so stored
    # grads are never mutated in place and may alias downstream buffers.
    if t.grad is None:
        t.grad = g if g.shape == t.data.shape else np.broadcast_to(g, t.data.shape)
    else:
        t.grad = t.grad + g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def add(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = as_tensor(a)

        def bwd_scalar(g):
            if a.requires_grad:
                _accum(a, g)

        return _make(a.data + b, (a,), bwd_scalar)
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    return add(a, mul(b, -1.0))


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = as_tensor(a)

        def bwd_scalar(g):
            if a.requires_grad:
                _accum(a, g * b)

        return _make(a.data * b, (a,), bwd_scalar)
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bwd)


def matmul(a, b) -> Tensor:
    """Matrix product; supports 2-D weights under batched left operands."""
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ _swap(b.data), a.data.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                k = a.data.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(_swap(a.data) @ g, b.data.shape)
            _accum(b, gb)

    return _make(a.data @ b.data, (a, b), bwd)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * mask)

    return _make(x.data * mask, (x,), bwd)


def softmax_last(x) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            _accum(x, y * (g - dot))

    return _make(y, (x,), bwd)


def layer_norm_last(x, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.data.shape))
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        if x.requires_grad:
            gx_hat = g * gain.data
            m1 = gx_hat.mean(axis=-1, keepdims=True)
            m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gx_hat - m1 - xhat * m2))

    return _make(out, (x, gain, bias), bwd)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    orig = x.data.shape

    def bwd(g):
        if x.requires_grad:
            _accum(x, g.reshape(orig))

    return _make(x.data.reshape(shape), (x,), bwd)


def transpose(x, axes: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        if x.requires_grad:
            _accum(x, g.transpose(inverse))

    return _make(x.data.transpose(axes), (x,), bwd)


def select(x, index: int, axis: int) -> Tensor:
    """Pick one slice along an axis (the axis is removed)."""
    x = as_tensor(x)

    def bwd(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            sl = [slice(None)] * x.data.ndim
            sl[axis] = index
            full[tuple(sl)] = g
            _accum(x, full)

    return _make(np.take(x.data, index, axis=axis), (x,), bwd)


def stack(xs: list, axis: int) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def bwd(g):
        for k, x in enumerate(xs):
            if x.requires_grad:
                _accum(x, np.take(g, k, axis=axis))

    return _make(np.stack([x.data for x in xs], axis=axis), tuple(xs), bwd)


def concat(xs: list, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.data.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for x, piece in zip(xs, np.split(g, splits, axis=axis)):
            if x.requires_grad:
                _accum(x, piece)

    return _make(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), bwd)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis)
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.data.shape[a] for a in axes]))

    def bwd(g):
        if x.requires_grad:
            if axis is None:
                _accum(x, np.broadcast_to(g / count, x.data.shape).astype(x.data.dtype))
            else:
                g_exp = np.expand_dims(g, axis=axis)
                _accum(x, np.broadcast_to(g_exp / count, x.data.shape).astype(x.data.dtype))

    return _make(np.asarray(out), (x,), bwd)


def sum_all(x) -> Tensor:
    x = as_tensor(x)

    def bwd(g):
        if x.requires_grad:
            _accum(x, np.broadcast_to(g, x.data.shape).astype(x.data.dtype))

    return _make(np.asarray(x.data.sum()), (x,), bwd)
