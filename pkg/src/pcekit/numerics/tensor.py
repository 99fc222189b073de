"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds a node holding its parents and a closure that maps the
output gradient to one gradient per parent.  ``Tensor.backward`` walks the
graph once in reverse topological order; afterwards the graph is marked
consumed and a second ``backward`` through it raises.
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager

import numpy as np

from .. import kernels


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


# Per-thread so that concurrent grid cells cannot flip each other's mode.
_STATE = threading.local()


@contextmanager
def no_grad():
    """Disable graph recording (inference) in the current thread."""
    prev = grad_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = prev


def grad_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_consumed", "name")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self._consumed = False
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad}{tag})"

    def zero_grad(self):
        self.grad = None

    # -- autodiff ------------------------------------------------------
    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if self._consumed:
            raise RuntimeError("graph already used for backward; rebuild it (and zero grads) first")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: implicit gradient needs a scalar output, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        owned = set()  # ids whose buffer was allocated here and may be updated in place
        for node in reversed(_topo(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:  # leaf
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                _accumulate(grads, owned, parent, pg)
            node._parents = ()
            node._backward = None
            node._consumed = True

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)


class SliceGrad:
    """Gradient that is non-zero only at ``index`` of its parent."""

    __slots__ = ("index", "value", "basic")

    def __init__(self, index, value, basic):
        self.index, self.value, self.basic = index, value, basic


def _accumulate(grads, owned, parent, pg):
    key = id(parent)
    cur = grads.get(key)
    if isinstance(pg, SliceGrad):
        if cur is None:
            cur = np.zeros(parent.shape)
        elif key not in owned:
            cur = cur.copy()
        grads[key] = cur
        owned.add(key)
        if pg.basic:
            cur[pg.index] += pg.value
        else:
            np.add.at(cur, pg.index, pg.value)
    elif cur is None:
        grads[key] = pg
    elif key in owned:
        cur += pg
    else:
        grads[key] = cur + pg
        owned.add(key)


def _topo(root: Tensor) -> list[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        if node._consumed:
            raise RuntimeError("graph already used for backward; rebuild it (and zero grads) first")
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op}: non-finite values in output of shape {data.shape}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._consumed = False
    out.name = ""
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return (unbroadcast(g, a.shape) if a.requires_grad else None,
                unbroadcast(g, b.shape) if b.requires_grad else None)

    return _node(a.data + b.data, (a, b), backward, "add")


def neg(a) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return (unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _node(a.data * b.data, (a, b), backward, "mul")


def sigmoid(a) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


# -- linear algebra & shape ----------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim == 2:
        # fold leading dims into one GEMM
        k, m = b.shape
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (m,))

        def backward(g):
            g2 = g.reshape(-1, m)
            return ((g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None,
                    a2.T @ g2 if b.requires_grad else None)

        return _node(out, (a, b), backward, "matmul")

    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        return (unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None,
                unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None)

    return _node(out, (a, b), backward, "matmul")


def reshape(a, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=()) -> Tensor:
    axes = tuple(axes) or tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a, ax1, ax2) -> Tensor:
    return _node(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    basic = _is_basic_index(idx)
    try:
        out = a.data[idx]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} (shape {a.shape})") from None
    if basic:
        out = out.copy()

    return _node(out, (a,), lambda g: (SliceGrad(idx, g, basic),), "slice")


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        parts = np.split(g, bounds, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return _node(out, tuple(tensors), backward, "concat")


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) if t.requires_grad else None for i, t in enumerate(tensors))

    return _node(out, tuple(tensors), backward, "stack")


def embedding_lookup(table, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"embedding_lookup: index out of range [0, {n}) (got {idx.min()}..{idx.max()})")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(table.data[idx], (table,), backward, "embedding")


# -- reductions ----------------------------------------------------------

def sum_(a, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out, dtype=np.float64), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / float(n))


# -- fused neural ops ----------------------------------------------------

def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta shapes {gamma.shape}/{beta.shape} do not match last dim {d}")
    y, xhat, rstd = kernels.layer_norm(x.data, gamma.data, beta.data, eps)

    def backward(g):
        dx, dgamma, dbeta = kernels.layer_norm_backward(g, xhat, rstd, gamma.data)
        return dx, dgamma, dbeta

    return _node(y, (x, gamma, beta), backward, "layer_norm")


def softmax_rows(logits, bias=None) -> Tensor:
    """Softmax over the last axis of ``logits + bias`` (bias broadcasts)."""
    logits = as_tensor(logits)
    if bias is None:
        z, parents = logits.data, (logits,)
    else:
        bias = as_tensor(bias)
        _check_broadcast("softmax_rows", logits, bias)
        z, parents = logits.data + bias.data, (logits, bias)
    p = kernels.softmax_rows(z)

    def backward(g):
        dz = kernels.softmax_rows_backward(p, g)
        grads = [unbroadcast(dz, logits.shape) if logits.requires_grad else None]
        if bias is not None:
            grads.append(unbroadcast(dz, bias.shape) if bias.requires_grad else None)
        return tuple(grads)

    return _node(p, parents, backward, "softmax_rows")


def log_softmax(logits) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(x, targets, from_probs: bool = False) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under rows of ``x``.

    ``x`` holds logits by default, or probabilities with ``from_probs``.
    """
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != t.size:
        raise ShapeError(f"cross_entropy: inputs {x.shape} vs {t.size} targets")
    n = t.size
    rows = np.arange(n)
    if from_probs:
        pt = x.data[rows, t]
        loss = -np.log(pt).mean() if np.all(pt > 0) else np.inf

        def backward(g):
            full = np.zeros_like(x.data)
            full[rows, t] = -g / (n * pt)
            return (full,)
    else:
        lsm = log_softmax(x.data)
        loss = -lsm[rows, t].mean()

        def backward(g):
            d = np.exp(lsm)
            d[rows, t] -= 1.0
            return (d * (g / n),)

    return _node(np.asarray(loss, dtype=np.float64), (x,), backward, "cross_entropy")


def _lstm_pointwise(gates, c_prev) -> Tensor:
    """Returns a (2, B, H) tensor stacking (h_t, c_t)."""
    h, c, cache = kernels.lstm_pointwise(gates.data, c_prev.data)

    def backward(g):
        dgates, dc_prev = kernels.lstm_pointwise_backward(g[0], g[1], cache, c_prev.data)
        return dgates, dc_prev

    return _node(np.stack([h, c]), (gates, c_prev), backward, "lstm_pointwise")


def lstm_cell(x_t, h_prev, c_prev, w_x, w_h, b):
    """Standard LSTM cell, gate order (i, f, g, o) along the last axis.

    Returns ``(h_t, c_t)`` with c_t = f*c_prev + i*g and h_t = o*tanh(c_t).
    """
    x_t, h_prev, c_prev = as_tensor(x_t), as_tensor(h_prev), as_tensor(c_prev)
    hd = h_prev.shape[-1]
    if w_x.shape[-1] != 4 * hd or w_h.shape != (hd, 4 * hd) or b.shape != (4 * hd,) or c_prev.shape != h_prev.shape:
        raise ShapeError(
            f"lstm_cell: hidden {hd} inconsistent with w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}, c {c_prev.shape}"
        )
    gates = matmul(x_t, w_x) + matmul(h_prev, w_h) + b
    return lstm_from_gates(gates, c_prev)


def lstm_from_gates(gates, c_prev):
    hc = _lstm_pointwise(gates, c_prev)
    return hc[0], hc[1]


def scaled(a, factor: float) -> Tensor:
    return mul(a, float(factor))


def inv_sqrt(n: int) -> float:
    return 1.0 / math.sqrt(n)
