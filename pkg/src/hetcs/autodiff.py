"""Small reverse-mode autodiff over dense float64 arrays (rank <= 2).

Every op builds a new :class:`Tensor` that remembers its parents and a closure
propagating the output gradient back to them.  :func:`backward` walks the
recorded graph in reverse topological order and accumulates into ``.grad`` of
every leaf created with ``requires_grad=True``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    # make ``ndarray * Tensor`` dispatch to Tensor.__rmul__
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 2:
            raise ShapeError(f"rank {self.data.ndim} tensors are not supported")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ---------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope)
    return _make(x.data * scale, (x,), lambda g: (g * scale,))


def elu(x: Tensor) -> Tensor:
    neg = np.expm1(np.minimum(x.data, 0.0))
    out = np.where(x.data > 0, x.data, neg)
    dout = np.where(x.data > 0, 1.0, neg + 1.0)
    return _make(out, (x,), lambda g: (g * dout,))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    # Branching on sign keeps exp() from overflowing.
    ez = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


# -- shape / linear algebra ----------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad = a.data if a.data.ndim == 2 else a.data.reshape(1, -1)
    bd = b.data if b.data.ndim == 2 else b.data.reshape(-1, 1)
    if ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def backward(g):
        g2 = g.reshape(ad.shape[0], bd.shape[1])
        return (g2 @ bd.T).reshape(a.shape), (ad.T @ g2).reshape(b.shape)

    out = ad @ bd
    if a.data.ndim == 1 and b.data.ndim == 1:
        out = out.reshape(())
    elif a.data.ndim == 1:
        out = out.reshape(-1)
    elif b.data.ndim == 1:
        out = out.reshape(-1)
    return _make(out, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    return _make(x.data.T, (x,), lambda g: (g.T,))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat(axis={axis}): incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=axis is not None)
    return _make(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _make(x.data.mean(), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def gather_rows(x: Tensor, idx) -> Tensor:
    """``x[idx]`` along the first axis; repeated indices accumulate on backward.

    ``idx`` may be a :class:`Segments` over ``x``'s rows, which makes the
    backward scatter a cached sparse product instead of ``np.add.at``.
    """
    n = x.shape[0]
    if isinstance(idx, Segments):
        seg = idx
        if seg.count != n:
            raise ShapeError(f"gather_rows: segments over {seg.count} rows, tensor has {n}")
        return _make(x.data[seg.ids], (x,), lambda g: (seg.sum(g),))
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeError(f"gather_rows: index out of range for {n} rows")

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), backward)


# -- segment ops ---------------------------------------------------------------
@dataclass(frozen=True)
class Segments:
    """Group assignment of rows to ``count`` segments, with a cached sum matrix."""

    ids: np.ndarray
    count: int
    _sum: sp.csr_matrix = field(repr=False)
    _sorted: bool = field(repr=False)

    @classmethod
    def from_ids(cls, ids, count: int | None = None) -> "Segments":
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if count is None:
            count = int(ids.max()) + 1 if ids.size else 0
        if ids.size and (ids.min() < 0 or ids.max() >= count):
            raise ShapeError("segment id out of range")
        m = sp.csr_matrix(
            (np.ones(ids.size), (ids, np.arange(ids.size))), shape=(count, ids.size)
        )
        m.sort_indices()
        srt = bool(np.all(np.diff(ids) >= 0)) if ids.size else True
        return cls(ids, count, m, srt)

    def sum(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(self._sum @ values)

    def max(self, values: np.ndarray) -> np.ndarray:
        out = np.full((self.count,) + values.shape[1:], -np.inf)
        if not self.ids.size:
            return out
        if self._sorted:
            starts = np.flatnonzero(np.r_[True, np.diff(self.ids) != 0])
            out[self.ids[starts]] = np.maximum.reduceat(values, starts, axis=0)
        else:
            np.maximum.at(out, self.ids, values)
        return out


def _segments(segment_ids, count) -> Segments:
    if isinstance(segment_ids, Segments):
        return segment_ids
    return Segments.from_ids(segment_ids, count)


def segment_sum(values: Tensor, segment_ids, count: int | None = None) -> Tensor:
    """Sum rows of ``values`` sharing a segment id; empty segments give zero rows."""
    seg = _segments(segment_ids, count)
    if values.shape[0] != seg.ids.shape[0]:
        raise ShapeError(f"segment_sum: {values.shape[0]} rows vs {seg.ids.shape[0]} segment ids")
    return _make(seg.sum(values.data), (values,), lambda g: (g[seg.ids],))


def segment_softmax(scores: Tensor, segment_ids, count: int | None = None) -> Tensor:
    """Softmax over the rows of each segment, column by column."""
    seg = _segments(segment_ids, count)
    if scores.shape[0] != seg.ids.shape[0]:
        raise ShapeError(f"segment_softmax: {scores.shape[0]} rows vs {seg.ids.shape[0]} segment ids")
    if scores.shape[0] == 0:
        return _make(scores.data.copy(), (scores,), lambda g: (g,))
    z = scores.data - seg.max(scores.data)[seg.ids]
    ez = np.exp(z)
    out = ez / seg.sum(ez)[seg.ids]

    def backward(g):
        return (out * (g - seg.sum(g * out)[seg.ids]),)

    return _make(out, (scores,), backward)


def head_aggregate(weights: Tensor, values: Tensor, dst: Segments, src: np.ndarray, heads: int) -> Tensor:
    """Per-head weighted neighbor sum.

    Row ``i`` of the output, columns of head ``k``, is
    ``sum_{e: dst_e = i} weights[e, k] * values[src_e, head-k columns]``.
    Equivalent to gathering ``values[src]``, scaling and :func:`segment_sum`,
    without materializing the per-edge rows.  ``dst`` must be sorted.
    """
    if not dst._sorted:
        raise ValueError("head_aggregate: destination ids must be sorted")
    e, d = weights.shape[0], values.shape[1]
    if weights.shape != (e, heads) or d % heads or src.shape[0] != e or dst.ids.shape[0] != e:
        raise ShapeError(
            f"head_aggregate: weights {weights.shape}, values {values.shape}, {src.shape[0]} edges, {heads} heads"
        )
    width = d // heads
    indptr = np.zeros(dst.count + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst.ids, minlength=dst.count), out=indptr[1:])
    shape = (dst.count, values.shape[0])
    group = np.repeat(np.eye(heads), width, axis=0)
    mats = [sp.csr_matrix((weights.data[:, k], src, indptr), shape=shape) for k in range(heads)]
    out = np.empty((dst.count, d))
    for k, m in enumerate(mats):
        out[:, k * width:(k + 1) * width] = m @ values.data[:, k * width:(k + 1) * width]

    def backward(g):
        dv = np.empty_like(values.data)
        for k, m in enumerate(mats):
            cols = slice(k * width, (k + 1) * width)
            dv[:, cols] = m.T @ g[:, cols]
        prod = g[dst.ids]
        prod *= values.data[src]
        dw = prod @ group
        return dw, dv

    return _make(out, (weights, values), backward)


# -- backward ------------------------------------------------------------------
def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` (accumulating) on every leaf reachable from ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss is not connected to any tracked tensor")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
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
            grads[key] = pg if key not in grads else grads[key] + pg


# -- Adam ----------------------------------------------------------------------
@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update with decoupled weight decay, in place."""
    names = sorted(params)
    for name in names:
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != params[name].shape:
            raise ShapeError(f"adam_step: gradient of {name!r} has shape {g.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name in names:
        g = grads.get(name)
        if g is None:
            continue
        p = params[name].data
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr=1e-3, weight_decay=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.state = AdamState(lr=lr, weight_decay=weight_decay, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state)


# -- gradient checking -----------------------------------------------------------
def finite_diff_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Iterable[Tensor],
    step: float = 1e-5,
    per_tensor: bool = False,
):
    """Compare :func:`backward` gradients against central differences.

    The error of one tensor is ``|g_bp - g_fd| / max(|g_bp|, |g_fd|)`` in the
    Euclidean norm (0 when both vanish).  Returns the worst error, or a
    ``name -> error`` dict when ``per_tensor`` is set.
    """
    if not isinstance(params, Mapping):
        params = {str(i): p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    loss = fn()
    analytic = {}
    if loss.requires_grad:
        backward(loss)
    for name, p in params.items():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * step)
        a = analytic[name].reshape(-1)
        scale = max(np.linalg.norm(a), np.linalg.norm(numeric))
        errors[name] = 0.0 if scale == 0.0 else float(np.linalg.norm(a - numeric) / scale)
    for p in params.values():
        p.grad = None
    if per_tensor:
        return errors
    return max(errors.values(), default=0.0)
