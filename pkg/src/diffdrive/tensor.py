"""Reverse-mode autodiff over dense float64 arrays.

A Tensor wraps a numpy float64 array plus an optional gradient buffer and a
record of how it was produced. Calling ``backward()`` on a scalar walks the
graph in reverse topological order and accumulates dLoss/dLeaf into every
leaf that ``requires_grad``. Gradients accumulate across calls until the
caller zeroes them.

Conventions, deliberately strict to keep shape bugs loud:

- everything is float64, C-order;
- elementwise ops broadcast only across *leading* axes (the smaller operand
  must match the trailing shape of the larger); anything else needs an
  explicit ``reshape``/``broadcast_to``;
- every op validates that its output is finite and raises NumericError
  otherwise.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf

from .errors import DimensionError, NumericError, UsageError

_GRAD_ENABLED = True

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used for rollout/eval)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64, order="C")
        _check_finite(arr, "tensor init")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- gradient plumbing ---------------------------------------------

    def _accum_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate dSelf/dLeaf into every reachable leaf. Self must be scalar."""
        if self.data.size != 1:
            raise UsageError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise binary ops ------------------------------------------------


def _broadcast_check(a_shape, b_shape, op: str):
    """Return (out_shape, a_lead, b_lead): leading axes each operand broadcasts over."""
    if a_shape == b_shape:
        return a_shape, 0, 0
    if len(b_shape) < len(a_shape) and a_shape[len(a_shape) - len(b_shape):] == b_shape:
        return a_shape, 0, len(a_shape) - len(b_shape)
    if len(a_shape) < len(b_shape) and b_shape[len(b_shape) - len(a_shape):] == a_shape:
        return b_shape, len(b_shape) - len(a_shape), 0
    raise DimensionError(f"{op}: shapes {a_shape} and {b_shape} do not conform")


def _reduce_lead(g: np.ndarray, n_lead: int) -> np.ndarray:
    if n_lead == 0:
        return g
    return g.sum(axis=tuple(range(n_lead)))


def _binary(a, b, op_name, fwd, bwd_a, bwd_b) -> Tensor:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise UsageError(f"{op_name}: at least one operand must be a Tensor")
    a_const = not isinstance(a, Tensor)
    b_const = not isinstance(b, Tensor)
    a_data = np.asarray(a, dtype=np.float64) if a_const else a.data
    b_data = np.asarray(b, dtype=np.float64) if b_const else b.data
    if a_data.ndim > 0 and b_data.ndim > 0:
        _, a_lead, b_lead = _broadcast_check(a_data.shape, b_data.shape, op_name)
    else:
        a_lead = b_lead = 0  # scalar operand: plain numpy broadcast
    with np.errstate(all="ignore"):  # finite check raises; skip the warning
        out_data = fwd(a_data, b_data)
    parents = tuple(t for t in (a, b) if isinstance(t, Tensor))

    def backward(g):
        if not a_const and a.requires_grad:
            ga = bwd_a(g, a_data, b_data)
            if a_data.ndim > 0:
                ga = _reduce_lead(ga, a_lead) if g.ndim > a_data.ndim else ga
            else:
                ga = ga.sum()
            a._accum_grad(np.broadcast_to(ga, a_data.shape) if np.shape(ga) != a_data.shape else ga)
        if not b_const and b.requires_grad:
            gb = bwd_b(g, a_data, b_data)
            if b_data.ndim > 0:
                gb = _reduce_lead(gb, b_lead) if g.ndim > b_data.ndim else gb
            else:
                gb = gb.sum()
            b._accum_grad(np.broadcast_to(gb, b_data.shape) if np.shape(gb) != b_data.shape else gb)

    return _make(out_data, parents, backward, op_name)


def add(a, b) -> Tensor:
    return _binary(a, b, "add", lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, "sub", lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, "mul", lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(a, b, "div", lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(-g)

    return _make(-a.data, (a,), backward, "neg")


# -- matmul ------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 1 or bd.ndim < 2:
        raise DimensionError(f"matmul: got shapes {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: inner dims differ, {ad.shape} @ {bd.shape}")
    if bd.ndim > 2 and ad.ndim != bd.ndim:
        raise DimensionError(
            f"matmul: batched operands need equal leading dims, {ad.shape} @ {bd.shape}")
    out_data = np.matmul(ad, bd)

    def backward(g):
        if ad.ndim == 1:  # (k,) @ (k, m) -> (m,)
            if a.requires_grad:
                a._accum_grad(np.matmul(bd, g))
            if b.requires_grad:
                b._accum_grad(np.outer(ad, g))
            return
        if a.requires_grad:
            a._accum_grad(np.matmul(g, np.swapaxes(bd, -1, -2)))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
            if bd.ndim == 2 and gb.ndim > 2:
                gb = gb.sum(axis=tuple(range(gb.ndim - 2)))
            b._accum_grad(gb)

    return _make(out_data, (a, b), backward, "matmul")


# -- shape ops ---------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    out_data = np.ascontiguousarray(a.data.reshape(shape))

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g.reshape(a.data.shape))

    return _make(out_data, (a,), backward, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = np.ascontiguousarray(a.data.transpose(axes))

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g.transpose(inv))

    return _make(out_data, (a,), backward, "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit broadcast: expands size-1 axes and/or prepends new leading axes."""
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out_data = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    except ValueError as e:
        raise DimensionError(f"broadcast_to: {a.shape} -> {shape}") from e
    n_new = len(shape) - a.ndim
    expanded = tuple(i + n_new for i, d in enumerate(a.data.shape) if d == 1 and shape[i + n_new] != 1)

    def backward(g):
        if a.requires_grad:
            gg = g.sum(axis=tuple(range(n_new))) if n_new else g
            if expanded:
                gg = gg.sum(axis=tuple(i - n_new for i in expanded), keepdims=True)
            a._accum_grad(gg)

    return _make(out_data, (a,), backward, "broadcast_to")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise UsageError("concat: empty input")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(lo), int(hi))
                t._accum_grad(g[tuple(idx)])

    return _make(out_data, tuple(tensors), backward, "concat")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out_data = np.ascontiguousarray(a.data[idx])

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[idx] = g
            a._accum_grad(buf)

    return _make(out_data, (a,), backward, "slice_axis")


# -- reductions --------------------------------------------------------------


def _expand_reduced(g: np.ndarray, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, in_shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    if not keepdims:
        for ax in sorted(ax % len(in_shape) for ax in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, in_shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(_expand_reduced(g, a.data.shape, axis, keepdims).copy())

    return _make(np.asarray(out_data), (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in ((axis,) if isinstance(axis, int) else axis)])

    def backward(g):
        if a.requires_grad:
            a._accum_grad(_expand_reduced(g, a.data.shape, axis, keepdims) / count)

    return _make(np.asarray(out_data), (a,), backward, "mean")


# -- nonlinearities ------------------------------------------------------------


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (p * g).sum(axis=-1, keepdims=True)
            a._accum_grad(p * (g - dot))

    return _make(p, (a,), backward, "softmax")


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine).

    A constant input row maps to zeros: the variance-plus-eps denominator
    never divides by zero.
    """
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    n = a.data.shape[-1]

    def backward(g):
        if a.requires_grad:
            g_mean = g.mean(axis=-1, keepdims=True)
            gy_mean = (g * y).mean(axis=-1, keepdims=True)
            a._accum_grad(inv * (g - g_mean - y * gy_mean))

    return _make(y, (a,), backward, "layer_norm")


def gelu(a: Tensor) -> Tensor:
    """Exact-erf GELU."""
    a = as_tensor(a)
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_data = x * phi

    def backward(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
            a._accum_grad(g * (phi + x * pdf))

    return _make(out_data, (a,), backward, "gelu")


def tlog(a: Tensor) -> Tensor:
    a = as_tensor(a)
    with np.errstate(all="ignore"):
        out_data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g / a.data)

    return _make(out_data, (a,), backward, "log")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient passes only where a > floor."""
    a = as_tensor(a)
    mask = a.data > floor
    out_data = np.where(mask, a.data, floor)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * mask)

    return _make(out_data, (a,), backward, "clamp_min")


# -- lookup / scatter ----------------------------------------------------------


def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup: table (V, E), int indices of any shape -> (*idx.shape, E)."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise UsageError("embedding: indices must be integers")
    if idx.min(initial=0) < 0 or (idx.size and idx.max() >= table.data.shape[0]):
        raise DimensionError("embedding: index out of range")
    out_data = np.ascontiguousarray(table.data[idx])

    def backward(g):
        if table.requires_grad:
            buf = np.zeros_like(table.data)
            np.add.at(buf, idx.reshape(-1), g.reshape(-1, table.data.shape[-1]))
            table._accum_grad(buf)

    return _make(out_data, (table,), backward, "embedding")


def index_rows(a: Tensor, idx) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out_data = np.ascontiguousarray(a.data[idx])

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a._accum_grad(buf)

    return _make(out_data, (a,), backward, "index_rows")


def scatter_rows(a: Tensor, idx, size0: int) -> Tensor:
    """Place rows of `a` at positions `idx` of a zero tensor with leading dim size0."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out_data = np.zeros((size0,) + a.data.shape[1:])
    np.add.at(out_data, idx, a.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g[idx])

    return _make(out_data, (a,), backward, "scatter_rows")


def gather_last(a: Tensor, idx) -> Tensor:
    """Select entries along the last axis; idx shape = a.shape[:-1] + (K,)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape[:-1] != a.data.shape[:-1]:
        raise DimensionError(f"gather_last: index shape {idx.shape} vs data {a.shape}")
    out_data = np.take_along_axis(a.data, idx, axis=-1)

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf.reshape(-1, buf.shape[-1]),
                      (np.repeat(np.arange(idx.reshape(-1, idx.shape[-1]).shape[0]), idx.shape[-1]),
                       idx.reshape(-1)),
                      g.reshape(-1))
            a._accum_grad(buf)

    return _make(np.ascontiguousarray(out_data), (a,), backward, "gather_last")


# -- dropout --------------------------------------------------------------------


def make_dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Pregenerated inverted-dropout mask: 0 with prob `rate`, else 1/(1-rate)."""
    if not 0.0 <= rate <= 1.0:
        raise UsageError(f"dropout rate {rate} outside [0, 1]")
    if rate == 0.0:
        return np.ones(shape)
    if rate == 1.0:
        return np.zeros(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(a: Tensor, mask: np.ndarray) -> Tensor:
    """Apply a pregenerated mask (constant w.r.t. the graph)."""
    a = as_tensor(a)
    if mask.shape != a.data.shape:
        raise DimensionError(f"dropout: mask shape {mask.shape} vs data {a.shape}")
    out_data = a.data * mask

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * mask)

    return _make(out_data, (a,), backward, "dropout")
