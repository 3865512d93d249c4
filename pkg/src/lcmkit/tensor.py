"""Dense arrays with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array and, when it was produced by a
differentiable operation, a reference to its parents plus a closure that maps
the output gradient to parent gradients. Broadcasting between two tensors is
limited to exact shape matches and scalar-vs-tensor; any other broadcast has to
be spelled out with :func:`expand`. Constants (plain numbers or numpy arrays)
may broadcast freely as long as the tensor operand keeps its shape.
"""

from __future__ import annotations

import contextlib
import hashlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def backward(self) -> dict:
        return backward(self)

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def from_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of a differentiable op.

    ``backward_fn(g)`` receives the output gradient and returns one gradient
    (or ``None``) per parent, in order.
    """
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------- backward
def _toposort(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Populate ``.grad`` on every trainable leaf reachable from ``loss``.

    Gradients are recomputed from scratch on each call. When ``leaves`` is
    given, leaves that the loss does not depend on get an explicit zero
    gradient. Returns a map from ``id(leaf)`` to its gradient array.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    result: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_toposort(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g
                result[id(node)] = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"gradient shape {pg.shape} does not match {parent.shape}")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if leaves is not None:
        for leaf in leaves:
            if id(leaf) not in result:
                leaf.grad = np.zeros_like(leaf.data)
                result[id(leaf)] = leaf.grad
    return result


def grad(loss: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    found = backward(loss, leaves)
    return [found[id(leaf)] for leaf in leaves]


# ------------------------------------------------------------ elementwise
def _is_scalar(t: Tensor) -> bool:
    return t.ndim == 0 or t.shape == (1,)


def _binary_shapes(a: Tensor, b) -> tuple[Tensor, object, bool]:
    """Return (a, b, b_is_tensor) after validating the restricted broadcast."""
    if isinstance(b, Tensor):
        if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
            raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
        return a, b, True
    c = np.asarray(b)
    if c.dtype.kind == "f" and c.dtype != a.dtype:
        c = c.astype(a.dtype)
    elif c.dtype.kind != "f":
        c = c.astype(a.dtype)
    if c.ndim and np.broadcast_shapes(a.shape, c.shape) != a.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs constant {c.shape}")
    return a, c, False


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a = as_tensor(a)
    a, b, bt = _binary_shapes(a, b)
    if not bt:
        return from_op(a.data + b, (a,), lambda g: (g,))
    sa, sb = a.shape, b.shape
    return from_op(a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    a, b, bt = _binary_shapes(a, b)
    if not bt:
        return from_op(a.data - b, (a,), lambda g: (g,))
    sa, sb = a.shape, b.shape
    return from_op(a.data - b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    a, b, bt = _binary_shapes(a, b)
    if not bt:
        return from_op(a.data * b, (a,), lambda g: (g * b,))
    ad, bd = a.data, b.data
    return from_op(
        ad * bd, (a, b), lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape))
    )


def div(a, b) -> Tensor:
    a = as_tensor(a)
    a, b, bt = _binary_shapes(a, b)
    if not bt:
        return from_op(a.data / b, (a,), lambda g: (g / b,))
    ad, bd = a.data, b.data
    out = ad / bd
    return from_op(
        out, (a, b), lambda g: (_reduce_to(g / bd, ad.shape), _reduce_to(-g * out / bd, bd.shape))
    )


def neg(a: Tensor) -> Tensor:
    return from_op(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    x = a.data
    return from_op(x**exponent, (a,), lambda g: (g * exponent * x ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return from_op(np.log(x), (a,), lambda g: (g / x,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return from_op(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def abs_(a: Tensor) -> Tensor:
    x = a.data
    return from_op(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return from_op(x * s, (a,), lambda g: (g * s * (1.0 + x * (1.0 - s)),))


def relu(a: Tensor) -> Tensor:
    x = a.data
    return from_op(np.maximum(x, 0), (a,), lambda g: (g * (x > 0),))


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch a pointwise op by name (``add``, ``mul``, ``exp`` ...)."""
    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    unary = {
        "neg": neg,
        "exp": exp,
        "log": log,
        "sqrt": sqrt,
        "tanh": tanh,
        "abs": abs_,
        "sigmoid": sigmoid,
        "silu": silu,
        "relu": relu,
    }
    if op in binary:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return binary[op](as_tensor(a), b)
    if op in unary:
        return unary[op](as_tensor(a))
    raise ValueError(f"unknown elementwise op {op!r}")


# -------------------------------------------------------------- reductions
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return from_op(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul(tsum(a, axes, keepdims), 1.0 / max(count, 1))


# ------------------------------------------------------------ shape ops
def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape``; the gradient sums back."""
    shape = tuple(shape)
    src = a.shape
    lead = len(shape) - len(src)
    if lead < 0 or any(s not in (1, d) for s, d in zip(src, shape[lead:])):
        raise ShapeError(f"cannot expand {src} to {shape}")
    axes = tuple(range(lead)) + tuple(
        lead + i for i, (s, d) in enumerate(zip(src, shape[lead:])) if s == 1 and d != 1
    )

    def bw(g):
        g = g.sum(axis=axes, keepdims=True) if axes else g
        return (g.reshape(src),)

    return from_op(np.broadcast_to(a.data, shape), (a,), bw)


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return from_op(np.asarray(a.data[index]), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def take_rows(table: Tensor, index) -> Tensor:
    """Gather rows of a 2-D ``table``; gradient scatter-adds into the rows used."""
    idx = np.asarray(index, dtype=np.int64)
    shape, dtype = table.shape, table.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return from_op(table.data[idx], (table,), bw)


# --------------------------------------------------------------- linear algebra
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch extents, if any, must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner extent mismatch: {a.shape} @ {b.shape}")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"batch extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return from_op(
        ad @ bd,
        (a, b),
        lambda g: (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g),
    )


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of an n-d ``x``."""
    xd, wd = x.data, weight.data
    if xd.shape[-1] != wd.shape[0]:
        raise ShapeError(f"inner extent mismatch: {x.shape} @ {weight.shape}")
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, wd.shape[0])
    out = x2 @ wd
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (wd.shape[1],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return from_op(out, parents, bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return from_op(out, (a,), bw)


# ------------------------------------------------------------------ RNG
_MASK64 = (1 << 64) - 1


def _as_shape(shape) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


class RngStream:
    """Counter-based normal/uniform generator.

    Uniforms come from the Philox-4x64 block cipher keyed by ``seed`` and
    positioned at ``counter``; normals use Box-Muller on pairs of uniforms.
    Each draw advances ``counter`` by the number of Philox blocks consumed, so
    the sequence depends only on ``(seed, counter)``.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter) & _MASK64

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def split(self, tag) -> "RngStream":
        digest = hashlib.blake2b(
            f"{self.seed}:{self.counter}:{tag}".encode(), digest_size=8
        ).digest()
        return RngStream(int.from_bytes(digest, "little"), 0)

    def _raw(self, n: int) -> np.ndarray:
        blocks = (n + 3) // 4
        if blocks == 0:
            return np.empty(0, dtype=np.uint64)
        gen = np.random.Philox(counter=[self.counter, 0, 0, 0], key=[self.seed, 0])
        raw = gen.random_raw(blocks * 4)
        self.counter = (self.counter + blocks) & _MASK64
        return raw[:n]

    def uniform(self, shape) -> np.ndarray:
        """Uniform draws on the open interval (0, 1)."""
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        raw = self._raw(n)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return u.reshape(shape)

    def normal(self, shape) -> np.ndarray:
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u = self.uniform((2 * pairs,))
        r = np.sqrt(-2.0 * np.log(u[:pairs]))
        theta = 2.0 * np.pi * u[pairs:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return z[:n].reshape(shape)

    def integers(self, low: int, high: int, shape) -> np.ndarray:
        """Integers uniform on the closed range [low, high]."""
        u = self.uniform(shape)
        return (low + np.floor(u * (high - low + 1))).astype(np.int64)


def split(stream: RngStream, tag) -> RngStream:
    return stream.split(tag)


def gaussian(stream: RngStream, shape, dtype=np.float64) -> Tensor:
    return Tensor(stream.normal(shape).astype(dtype, copy=False))
