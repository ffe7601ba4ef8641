"""Dense float32 tensors with tape-based reverse-mode differentiation.

Each operation returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. :func:`backward` walks
the graph in reverse topological order, visiting each node once.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when a precondition on an operation is violated."""


@contextlib.contextmanager
def precision(dtype):
    """Temporarily compute in ``dtype`` (used by finite-difference oracles)."""
    global DTYPE
    prev = DTYPE
    DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, EMA, optimizers)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Row-major float32 array plus optional gradient and tape linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # no-copy constructor for op outputs
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr, dtype=DTYPE)
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t.op = "leaf"
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self.shape)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def _raise_not_scalar(shape):
    raise ContractError(f"item() requires a single-element tensor, got shape {shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)


def _make(out: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    t = Tensor._wrap(out)
    t.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward_fn
    return t


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=DTYPE)
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> None:
    # broadcasting is allowed only over leading dimensions
    sa, sb = a.shape, b.shape
    k = min(len(sa), len(sb))
    if k and sa[len(sa) - k:] != sb[len(sb) - k:]:
        # allow size-1 leading-free broadcast of trailing dims only when one side is scalar-like
        ok = all(x == y or x == 1 or y == 1 for x, y in zip(sa[len(sa) - k:], sb[len(sb) - k:]))
        if not ok:
            raise ShapeError(f"{name}: incompatible shapes {sa} and {sb}")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = DTYPE(c)

    def bw(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), bw, "scale")


def abs_(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bw, "abs")


_GELU_C = DTYPE(math.sqrt(2.0 / math.pi))


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    inner = _GELU_C * (x + DTYPE(0.044715) * (x * x * x))
    th = np.tanh(inner)
    out = DTYPE(0.5) * x * (DTYPE(1.0) + th)

    def bw(g):
        dinner = _GELU_C * (DTYPE(1.0) + DTYPE(3 * 0.044715) * x * x)
        d = DTYPE(0.5) * (DTYPE(1.0) + th) + DTYPE(0.5) * x * (DTYPE(1.0) - th * th) * dinner
        _accum(a, g * d)

    return _make(out, (a,), bw, "gelu")


def softmax_lastdim(a: Tensor) -> Tensor:
    x = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _accum(a, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (a,), bw, "softmax")


def layernorm_lastdim(a: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
                      eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis; optional affine ``gamma``/``beta`` of that width."""
    x = a.data
    n = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = DTYPE(1.0) / np.sqrt(var + DTYPE(eps))
    xhat = xc * inv
    for p in (gamma, beta):
        if p is not None and p.shape != (n,):
            raise ShapeError(f"layernorm: affine shape {p.shape} does not match width {n}")
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    parents = tuple(p for p in (a, gamma, beta) if p is not None)

    def bw(g):
        if gamma is not None and gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, n).sum(axis=0))
        if beta is not None and beta.requires_grad:
            _accum(beta, g.reshape(-1, n).sum(axis=0))
        if a.requires_grad:
            gh = g * gamma.data if gamma is not None else g
            dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            _accum(a, dx)

    return _make(out, parents, bw, "layernorm")


# ---------------------------------------------------------------- reductions


def sum_(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------- structure


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(shape)
    src = a.shape

    def bw(g):
        _accum(a, g.reshape(src))

    return _make(out.copy(), (a,), bw, "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        _accum(a, np.transpose(g, inv))

    return _make(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), bw, "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            x != y for i, (x, y) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def bw(g):
        start = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(start, start + n)
                _accum(t, g[tuple(idx)])
            start += n

    return _make(out, tensors, bw, "concat")


def slice_(a: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; gradients scatter back (with accumulation)."""
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        _accum(a, full)

    return _make(np.array(out, dtype=DTYPE), (a,), bw, "slice")


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D table, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"row ids out of range for table with {table.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accum(table, full)

    return _make(table.data[ids], (table,), bw, "take_rows")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            _accum(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            _accum(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------- losses


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference; the subgradient at zero difference is 0."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shapes {pred.shape} and {target.shape} differ")
    d = pred.data - target.data
    n = d.size
    out = np.asarray(np.abs(d).mean(dtype=np.float64), dtype=DTYPE)

    def bw(g):
        s = np.sign(d) * (g / DTYPE(n))
        _accum(pred, s)
        _accum(target, -s)

    return _make(out, (pred, target), bw, "l1_loss")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    d = pred.data - target.data
    n = d.size
    out = np.asarray((d.astype(np.float64) ** 2).mean(), dtype=DTYPE)

    def bw(g):
        s = d * (DTYPE(2.0) * g / DTYPE(n))
        _accum(pred, s)
        _accum(target, -s)

    return _make(out, (pred, target), bw, "mse_loss")


# ---------------------------------------------------------------- tape


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    Gradients accumulate across calls; the graph is left intact.
    """
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf
            if node.grad is None:
                node.grad = g.astype(DTYPE, copy=True)
            else:
                node.grad += g
            continue
        # route parent grads through a temporary accumulator instead of .grad
        uniq = list({id(p): p for p in node._parents}.values())
        saved = [(p, p.grad) for p in uniq]
        for p in uniq:
            p.grad = None
        node._backward(g)
        for p, old in saved:
            new = p.grad
            p.grad = old
            if new is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + new
            else:
                grads[key] = new


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
