"""Reverse-mode automatic differentiation over dense numpy arrays.

Every trainable quantity in this package is a Tensor: a float array plus an
optional gradient buffer. Operations build a computation graph on the fly
(only when some input requires grad); backward() replays it once in reverse
topological order and then releases it.

Arrays are float32 by default. Reductions accumulate in float64 before
casting back, which keeps batch losses stable without widening the
parameters themselves. Passing float64 data explicitly is supported and is
what the finite-difference checks use for precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


_grad_enabled = [True]


class no_grad:
    """Context manager that skips graph construction, for decode/eval paths."""

    def __enter__(self):
        self._prev = _grad_enabled[0]
        _grad_enabled[0] = False

    def __exit__(self, *exc):
        _grad_enabled[0] = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, backward_fn):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = _grad_enabled[0] and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """Same data, cut out of the graph (no grad flows through)."""
        return Tensor._from_op(self.data, (), None)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g.astype(self.data.dtype, copy=False)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _lift(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, opname):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise --------------------------------------------------------


def add(a, b):
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def backward_fn(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._from_op(out_data, (a, b), backward_fn)


def sub(a, b):
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def backward_fn(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor._from_op(out_data, (a, b), backward_fn)


def mul(a, b):
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def backward_fn(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._from_op(out_data, (a, b), backward_fn)


def neg(a):
    def backward_fn(out):
        a._accumulate(-out.grad)

    return Tensor._from_op(-a.data, (a,), backward_fn)


def reciprocal(a):
    out_data = 1.0 / a.data

    def backward_fn(out):
        a._accumulate(-out.grad * out.data * out.data)

    return Tensor._from_op(out_data, (a,), backward_fn)


def clamp_min(a, lo):
    """Elementwise max(a, lo); gradient is zero where the floor is active."""
    out_data = np.maximum(a.data, a.data.dtype.type(lo))

    def backward_fn(out):
        a._accumulate(out.grad * (a.data > lo))

    return Tensor._from_op(out_data, (a,), backward_fn)


def sigmoid(a):
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward_fn(out):
        a._accumulate(out.grad * out.data * (1.0 - out.data))

    return Tensor._from_op(out_data, (a,), backward_fn)


def tanh(a):
    out_data = np.tanh(a.data)

    def backward_fn(out):
        a._accumulate(out.grad * (1.0 - out.data * out.data))

    return Tensor._from_op(out_data, (a,), backward_fn)


def relu(a):
    out_data = np.maximum(a.data, 0)

    def backward_fn(out):
        a._accumulate(out.grad * (a.data > 0))

    return Tensor._from_op(out_data, (a,), backward_fn)


def exp(a):
    out_data = np.exp(a.data)

    def backward_fn(out):
        a._accumulate(out.grad * out.data)

    return Tensor._from_op(out_data, (a,), backward_fn)


def log(a):
    out_data = np.log(a.data)

    def backward_fn(out):
        a._accumulate(out.grad / a.data)

    return Tensor._from_op(out_data, (a,), backward_fn)


# -- matrix / shape -----------------------------------------------------


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward_fn(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._from_op(out_data, (a, b), backward_fn)


def reshape(a, shape):
    out_data = a.data.reshape(shape)

    def backward_fn(out):
        a._accumulate(out.grad.reshape(a.shape))

    return Tensor._from_op(out_data, (a,), backward_fn)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(out):
        g = out.grad
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                t._accumulate(g[tuple(idx)])

    return Tensor._from_op(out_data, tuple(tensors), backward_fn)


def slice_(a, key):
    out_data = a.data[key]

    def backward_fn(out):
        g = np.zeros_like(a.data)
        g[key] = out.grad
        a._accumulate(g)

    return Tensor._from_op(out_data, (a,), backward_fn)


# -- reductions (float64 accumulation) ----------------------------------


def sum_(a, axis=None, keepdims=False):
    if axis is not None and not isinstance(axis, int):
        raise TypeError("sum: axis must be None or an int")
    out_data = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def backward_fn(out):
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return Tensor._from_op(out_data, (a,), backward_fn)


def mean(a, axis=None, keepdims=False):
    if axis is not None and not isinstance(axis, int):
        raise TypeError("mean: axis must be None or an int")
    out_data = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    n = a.data.size if axis is None else a.shape[axis]

    def backward_fn(out):
        g = out.grad / n
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return Tensor._from_op(out_data, (a,), backward_fn)


# -- softmax family (last axis, max-stabilized) -------------------------


def softmax(a):
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(out):
        g = out.grad
        y = out.data
        dot = (g * y).sum(axis=-1, keepdims=True)
        a._accumulate(y * (g - dot))

    return Tensor._from_op(out_data, (a,), backward_fn)


def log_softmax(a):
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse

    def backward_fn(out):
        g = out.grad
        soft = np.exp(out.data)
        a._accumulate(g - soft * g.sum(axis=-1, keepdims=True))

    return Tensor._from_op(out_data, (a,), backward_fn)


# -- lookups / masking --------------------------------------------------


def embedding_lookup(table, ids):
    """Rows of `table` selected by an integer id array."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ShapeError(f"embedding_lookup: ids must be integers, got dtype {ids.dtype}")
    out_data = table.data[ids]

    def backward_fn(out):
        g = np.zeros_like(table.data)
        np.add.at(g, ids, out.grad)
        table._accumulate(g)

    return Tensor._from_op(out_data, (table,), backward_fn)


def dropout(a, p, rng, training=True):
    """Inverted dropout: scale kept units by 1/(1-p) at train time, identity at eval."""
    if not training or p <= 0.0:
        return a
    if p >= 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    mask = (rng.random(a.shape) >= p).astype(a.dtype) / a.dtype.type(1.0 - p)
    return mul(a, Tensor._from_op(mask, (), None))


# -- backward -----------------------------------------------------------


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Populate .grad on every requires_grad tensor reachable from `loss`.

    The graph is released afterwards, so a second backward through the same
    nodes requires a fresh forward pass.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node)
    for node in order:
        node._parents = ()
        node._backward = None


# -- parameter store ----------------------------------------------------


class ParamStore:
    """Named collection of trainable tensors, snapshot-able for transfer."""

    def __init__(self, params=None):
        self._params = {}
        if params:
            for name, t in params.items():
                self.add(name, t)

    def add(self, name, tensor):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def merge(self, prefix, other):
        for name, t in other.items():
            self.add(f"{prefix}.{name}", t)

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def snapshot(self):
        """Copy of every parameter array, keyed by name."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_snapshot(self, snap):
        missing = set(self._params) - set(snap)
        extra = set(snap) - set(self._params)
        if missing or extra:
            raise KeyError(f"snapshot mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in snap.items():
            t = self._params[name]
            if t.data.shape != arr.shape:
                raise ShapeError(f"snapshot {name}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)


# -- gradient checking --------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    kinks: list = field(default_factory=list)
    worst: tuple = None  # (tensor index, flat coordinate, analytic, numeric)

    @property
    def passed(self):
        return not self.kinks and self.max_rel_err <= self.tol


def grad_check(f, point, h=1e-3, tol=1e-4):
    """Compare analytic gradients of scalar f against central differences.

    `point` is a Tensor or a sequence of Tensors; f is called with the same
    tensors each time, so it must rebuild its graph per call and be
    deterministic. Coordinates where the one-sided differences disagree are
    reported as kinks instead of silently passing. Use float64 points for
    meaningful tolerances near 1e-4.
    """
    points = [point] if isinstance(point, Tensor) else list(point)
    for p in points:
        p.requires_grad = True
        p.grad = None

    loss = f(*points)
    if loss.data.size != 1:
        raise ShapeError(f"grad_check: f must be scalar-valued, got shape {loss.shape}")
    f0 = float(loss.data)
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in points]
    report = GradCheckReport(max_rel_err=0.0, tol=tol)
    for pi, p in enumerate(points):
        flat = p.data.reshape(-1)
        for ci in range(flat.size):
            orig = flat[ci]
            flat[ci] = orig + h
            f_plus = float(f(*points).data)
            flat[ci] = orig - h
            f_minus = float(f(*points).data)
            flat[ci] = orig

            central = (f_plus - f_minus) / (2.0 * h)
            fwd = (f_plus - f0) / h
            bwd = (f0 - f_minus) / h
            if abs(fwd - bwd) > 0.05 * max(1.0, abs(fwd), abs(bwd)):
                report.kinks.append((pi, ci, fwd, bwd))
                continue
            a = float(analytic[pi].reshape(-1)[ci])
            rel = abs(a - central) / max(1.0, abs(a), abs(central))
            if rel > report.max_rel_err:
                report.max_rel_err = rel
                report.worst = (pi, ci, a, central)
    return report
