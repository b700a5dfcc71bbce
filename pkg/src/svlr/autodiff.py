"""Small define-by-run reverse-mode autodiff engine over numpy arrays.

Every primitive records its inputs and a backward closure on the output
tensor. ``backward`` walks the nodes reachable from a scalar root in reverse
execution order (each primitive carries a monotone sequence number), so each
node is visited exactly once.

All arithmetic is float64; that is the wide-precision mode the gradient
checks rely on.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_seq = itertools.count()
_grad_enabled = True


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class ShapeError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=DTYPE)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("tensor built from non-finite values")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_seq)
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def backward(self) -> None:
        backward(self)


def _scalar_error():
    raise ValueError("item() requires a single-element tensor")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    data = np.asarray(data, dtype=DTYPE)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._seq = next(_seq)
    out.op = op
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant."""
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(x: Tensor) -> Tensor:
    # subgradient at 0 is 0
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) = -softplus(-x), computed without overflow."""
    z = x.data
    val = np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))
    s = _stable_sigmoid(-z)
    return _make(val, (x,), lambda g: (g * s,), "log_sigmoid")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw, "minimum")


# ------------------------------------------------------------------ reductions

def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(x.data.sum(axis=axis), (x,), bw, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return scale(sum_(x, axis), 1.0 / n)


# ------------------------------------------------------------------ structural

def matmul(a, b) -> Tensor:
    """Matrix product; 2-D, or batched with identical leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return _make(x.data.T, (x,), lambda g: (g.T,), "transpose")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return _make(data, (x,), lambda g: (g.reshape(old),), "reshape")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, bw, "concat")


def take(x: Tensor, idx) -> Tensor:
    """Row select along axis 0 (repeats allowed)."""
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), bw, "take")


# -------------------------------------------------------------- set operations

def masked_max(x: Tensor, mask) -> Tensor:
    """Max over the masked entries of the last axis.

    Rows whose mask is empty yield 0. The gradient flows to a single argmax
    entry per row; ties go to the lowest index.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"mask shape {mask.shape} != {x.shape}")
    filled = np.where(mask, x.data, -np.inf)
    arg = filled.argmax(axis=-1)
    has = mask.any(axis=-1)
    picked = np.take_along_axis(x.data, arg[..., None], axis=-1)[..., 0]
    val = np.where(has, picked, 0.0)

    def bw(g):
        out = np.zeros(x.shape, dtype=DTYPE)
        np.put_along_axis(out, arg[..., None], np.where(has, g, 0.0)[..., None], axis=-1)
        return (out,)

    return _make(val, (x,), bw, "masked_max")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), bw, "softmax")


# ----------------------------------------------------------------- batch norm

class BatchNormState:
    """Running moments for one normalizer (mean 0, var 1 at init)."""

    __slots__ = ("mean", "var")

    def __init__(self, dim: int):
        self.mean = np.zeros(dim, dtype=DTYPE)
        self.var = np.ones(dim, dtype=DTYPE)


def batch_norm(x: Tensor, scale_: Tensor, offset: Tensor, state: BatchNormState,
               train: bool, eps: float = 1e-5, momentum: float = 0.9) -> Tensor:
    """Per-column normalization of a B x D batch followed by an affine map.

    Train mode uses (biased) batch moments and folds them into the running
    moments; eval mode uses the running moments only.
    """
    if x.data.ndim != 2:
        raise ShapeError("batch_norm expects a B x D matrix")
    B = x.shape[0]
    if train:
        if B < 2:
            raise DegenerateBatchError("batch_norm in train mode needs at least 2 rows")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        state.mean = momentum * state.mean + (1.0 - momentum) * mu
        state.var = momentum * state.var + (1.0 - momentum) * var
    else:
        mu, var = state.mean, state.var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * scale_.data + offset.data

    def bw(g):
        gs = (g * xhat).sum(axis=0)
        go = g.sum(axis=0)
        gxhat = g * scale_.data
        if train:
            gx = inv / B * (B * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
        else:
            gx = gxhat * inv
        return gx, gs, go

    return _make(out, (x, scale_, offset), bw, "batch_norm")


# -------------------------------------------------------------------- backward

def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every requires_grad leaf's ``grad``."""
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    nodes = _reachable(root)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape, dtype=DTYPE)}
    if root._backward is not None:
        root.grad = grads[id(root)].copy()   # d root / d root; interior nodes keep no grad otherwise
    for node in nodes:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _reachable(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    out: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        out.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    return out


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
