"""A small tape-free reverse-mode autodiff over dense numpy arrays.

Each :class:`Tensor` produced by an op remembers its parents and a closure
that maps the output gradient to parent gradients. :func:`backward` walks the
graph in reverse topological order and accumulates into leaf ``.grad``.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

_grad_enabled = True


class GraphStateError(RuntimeError):
    """Backward on a consumed graph, or on leaves whose gradients were not reset."""


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)
    __getitem__ = lambda self, idx: index(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphStateError("this graph was already differentiated; rebuild it with a new forward pass")
    if not loss.requires_grad:
        raise GraphStateError("loss is not connected to any trainable tensor")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
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

    leaves = [n for n in order if not n._parents]
    stale = [n for n in leaves if n.grad is not None]
    if stale:
        raise GraphStateError(
            f"{len(stale)} leaf tensor(s) still hold gradients; reset them before another backward"
        )

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if node._parents:
            node._parents = ()
            node._backward = None
    loss._consumed = True
    for n in leaves:
        if n.grad is None:
            n.grad = np.zeros_like(n.data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """``(..., n, k) @ (k, m)``; the right operand must be 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _result(a.data * scale, (a,), lambda g: (g * scale,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("minimum", a.data, b.data)
    take_a = a.data <= b.data
    return _result(np.minimum(a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def index(a, idx) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    a = as_tensor(a)

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), bw)


def scatter_matrix(rows: np.ndarray, n: int) -> sparse.csr_matrix:
    """Sparse ``(n, len(rows))`` incidence matrix with a one at ``(rows[i], i)``."""
    m = rows.size
    return sparse.csr_matrix((np.ones(m), (rows, np.arange(m))), shape=(n, m))


def gather_rows(a, rows: np.ndarray, scatter: sparse.csr_matrix | None = None) -> Tensor:
    """``a[rows]`` along axis 0. ``scatter`` may carry a precomputed
    :func:`scatter_matrix` for the backward pass."""
    a = as_tensor(a)
    n = a.shape[0]

    def bw(g):
        m = scatter if scatter is not None else scatter_matrix(rows, n)
        flat = g.reshape(g.shape[0], -1)
        return (np.asarray(m @ flat).reshape(a.shape),)

    return _result(a.data[rows], (a,), bw)


def head_scores(z, att) -> Tensor:
    """Per-head dot products: ``z`` (E, H, D) with ``att`` (H, D) -> (E, H)."""
    z, att = as_tensor(z), as_tensor(att)
    if z.data.ndim != 3 or z.shape[1:] != att.shape:
        raise ShapeError(f"head_scores: incompatible shapes {z.shape} and {att.shape}")
    out = np.einsum("ehd,hd->eh", z.data, att.data)
    return _result(out, (z, att), lambda g: (g[:, :, None] * att.data,
                                             np.einsum("eh,ehd->hd", g, z.data)))


def head_weight(x, w) -> Tensor:
    """Scale each head block: ``x`` (E, H*D) by ``w`` (E, H) -> (E, H*D)."""
    x, w = as_tensor(x), as_tensor(w)
    e, h = w.shape
    if x.data.ndim != 2 or x.shape[0] != e or x.shape[1] % h:
        raise ShapeError(f"head_weight: incompatible shapes {x.shape} and {w.shape}")
    d = x.shape[1] // h
    x3 = x.data.reshape(e, h, d)
    out = (x3 * w.data[:, :, None]).reshape(e, h * d)

    def bw(g):
        g3 = g.reshape(e, h, d)
        return (g3 * w.data[:, :, None]).reshape(e, h * d), np.einsum("ehd,ehd->eh", g3, x3)

    return _result(out, (x, w), bw)


def pick(a, cols: np.ndarray) -> Tensor:
    """``a[i, cols[i]]`` for a 2-D tensor."""
    a = as_tensor(a)
    rows = np.arange(a.shape[0])

    def bw(g):
        out = np.zeros_like(a.data)
        out[rows, cols] = g
        return (out,)

    return _result(a.data[rows, cols], (a,), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].data.ndim
    for t in ts[1:]:
        if t.data.ndim != ts[0].data.ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.data.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape} on axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _result(np.concatenate([t.data for t in ts], axis=ax), ts,
                   lambda g: tuple(np.split(g, bounds, axis=ax)))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)
    return _result(out, (a,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


class Segments:
    """Grouping of rows (edges) by a sorted segment id (destination node).

    Every segment must be non-empty; graphs guarantee this with self-loops.
    """

    __slots__ = ("ids", "starts", "count", "matrix")

    def __init__(self, ids: np.ndarray, count: int):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and np.any(np.diff(ids) < 0):
            raise ValueError("segment ids must be sorted")
        if ids.size == 0 or np.any(np.bincount(ids, minlength=count)[:count] == 0):
            raise ValueError("every segment needs at least one member")
        self.ids, self.count = ids, count
        self.starts = np.searchsorted(ids, np.arange(count))
        self.matrix = scatter_matrix(ids, count)

    def reduce_sum(self, x: np.ndarray) -> np.ndarray:
        flat = x.reshape(x.shape[0], -1)
        return np.asarray(self.matrix @ flat).reshape((self.count,) + x.shape[1:])

    def reduce_max(self, x: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(x, self.starts, axis=0)


def segment_sum(a, seg: Segments) -> Tensor:
    a = as_tensor(a)
    if a.shape[0] != seg.ids.size:
        raise ShapeError(f"segment_sum: {a.shape[0]} rows but {seg.ids.size} segment ids")
    return _result(seg.reduce_sum(a.data), (a,), lambda g: (g[seg.ids],))


def segment_softmax(a, seg: Segments) -> Tensor:
    """Softmax over the rows of each segment, independently per column."""
    a = as_tensor(a)
    if a.shape[0] != seg.ids.size:
        raise ShapeError(f"segment_softmax: {a.shape[0]} rows but {seg.ids.size} segment ids")
    ex = np.exp(a.data - seg.reduce_max(a.data)[seg.ids])
    out = ex / seg.reduce_sum(ex)[seg.ids]

    def bw(g):
        return (out * (g - seg.reduce_sum(out * g)[seg.ids]),)

    return _result(out, (a,), bw)


def conv2d(x, w, b=None) -> Tensor:
    """Valid, stride-1 convolution. ``x``: (N, H, W, C); ``w``: (kh, kw, C, C_out)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    n, h, wd, c = x.shape
    kh, kw, _, cout = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {w.shape[:2]} larger than input {x.shape[1:3]}")
    offsets = [(i, j) for i in range(kh) for j in range(kw)]
    patches = np.concatenate([x.data[:, i:i + ho, j:j + wo, :] for i, j in offsets], axis=-1)
    wmat = w.data.reshape(kh * kw * c, cout)
    out = patches @ wmat
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        parents.append(b)

    def bw(g):
        gw = (patches.reshape(-1, patches.shape[-1]).T @ g.reshape(-1, cout)).reshape(w.shape)
        gp = g @ wmat.T
        gx = np.zeros_like(x.data)
        for slot, (i, j) in enumerate(offsets):
            gx[:, i:i + ho, j:j + wo, :] += gp[..., slot * c:(slot + 1) * c]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.reshape(-1, cout).sum(axis=0))
        return tuple(grads)

    return _result(out, parents, bw)
