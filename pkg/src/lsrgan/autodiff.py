"""Define-by-run reverse-mode autodiff over float64 numpy arrays.

Every backward rule is written with differentiable ``Tensor`` ops, so the
gradients produced with ``create_graph=True`` are themselves graph nodes.
That is what lets the critic's input-gradient norm be differentiated again
with respect to the critic weights.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import kernels

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "grad",
    "backward",
    "input_gradient",
    "constant",
    "matmul",
    "concat",
    "relu",
    "leaky_relu",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "square",
    "hinge",
    "l2_norm",
    "softmax",
    "log_softmax",
    "softmax_cross_entropy",
    "squared_error",
]

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def _grad_mode(enabled):
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = enabled
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A float64 array plus the recorded op that produced it."""

    __slots__ = ("data", "requires_grad", "parents", "grad_fn", "op", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.grad_fn = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    @property
    def is_leaf(self):
        return self.grad_fn is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def constant(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, grad_fn, op):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.grad_fn = grad_fn
        out.op = op
    return out


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# shape plumbing


def sum_to(x, shape):
    """Sum ``x`` down to a broadcast-compatible ``shape``."""
    x = constant(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = x.data
    lead = data.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, d in enumerate(shape) if d == 1 and data.shape[lead + i] != 1
    )
    reduced = data.sum(axis=axes, keepdims=True).reshape(shape)
    return _make(reduced, (x,), lambda g: (broadcast_to(g, x.shape),), "sum_to")


def broadcast_to(x, shape):
    x = constant(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape).copy()
    return _make(data, (x,), lambda g: (sum_to(g, x.shape),), "broadcast_to")


def reshape(x, shape):
    x = constant(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (reshape(g, old),), "reshape")


def transpose(x):
    x = constant(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D tensor, got shape {x.shape}")
    return _make(x.data.T.copy(), (x,), lambda g: (transpose(g),), "transpose")


def take(x, index):
    """Basic or integer-array indexing; gradient scatters back with add."""
    x = constant(x)
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    return _make(x.data[index], (x,), lambda g: (_scatter(g, index, x.shape),), "take")


def _scatter(g, index, shape):
    data = np.zeros(shape)
    np.add.at(data, index, g.data)
    return _make(data, (g,), lambda gg: (take(gg, index),), "scatter")


def concat(tensors, axis=1):
    tensors = [constant(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in tensors]} on axis {axis}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def grad_fn(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            out.append(take(g, tuple(idx)))
        return tuple(out)

    return _make(data, tuple(tensors), grad_fn, "concat")


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)), "add")


def sub(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape)), "sub")


def mul(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (sum_to(g * b, a.shape), sum_to(g * a, b.shape)),
        "mul",
    )


def div(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("div", a, b)

    def grad_fn(g):
        ga = sum_to(g / b, a.shape)
        gb = sum_to(neg(g * a / (b * b)), b.shape)
        return ga, gb

    return _make(a.data / b.data, (a, b), grad_fn, "div")


def neg(a):
    a = constant(a)
    return _make(-a.data, (a,), lambda g: (neg(g),), "neg")


def matmul(a, b):
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
        "matmul",
    )


def reduce_sum(x, axis=None, keepdims=False):
    x = constant(x)
    data = x.data.sum(axis=axis, keepdims=True)
    kept_shape = data.shape
    if not keepdims:
        data = data.reshape(np.sum(x.data, axis=axis).shape)

    def grad_fn(g):
        return (broadcast_to(reshape(g, kept_shape), x.shape),)

    return _make(data, (x,), grad_fn, "sum")


def mean(x, axis=None, keepdims=False):
    x = constant(x)
    if x.size == 0:
        raise ShapeError("mean: empty tensor")
    count = x.size if axis is None else x.shape[axis]
    return reduce_sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(x):
    x = constant(x)
    return _make(np.exp(x.data), (x,), lambda g: (g * exp(x),), "exp")


def log(x):
    x = constant(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x,), "log")


def sqrt(x):
    x = constant(x)
    return _make(np.sqrt(x.data), (x,), lambda g: (g / (2.0 * sqrt(x)),), "sqrt")


def square(x):
    x = constant(x)
    return _make(x.data * x.data, (x,), lambda g: (g * x * 2.0,), "square")


def tanh(x):
    x = constant(x)

    def grad_fn(g):
        y = tanh(x)
        return (g * (1.0 - y * y),)

    return _make(np.tanh(x.data), (x,), grad_fn, "tanh")


def relu(x):
    x = constant(x)
    mask = (x.data > 0).astype(np.float64)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


# max(0, x); the name used where it acts as a constraint-violation hinge
hinge = relu


def leaky_relu(x, slope=0.2):
    x = constant(x)
    data = kernels.leaky_relu(x.data, slope)

    def grad_fn(g):
        return (g * kernels.leaky_relu_mask(x.data, slope),)

    return _make(data, (x,), grad_fn, "leaky_relu")


def l2_norm(x, axis=-1, keepdims=False):
    """Euclidean norm along ``axis``; subgradient 0 at the origin."""
    x = constant(x)
    sq = (x.data * x.data).sum(axis=axis, keepdims=True)
    norm = np.sqrt(sq)
    out = norm if keepdims else np.squeeze(norm, axis=axis)

    def grad_fn(g):
        n = l2_norm(x, axis=axis, keepdims=True)
        safe = np.where(norm > 0, 0.0, 1.0)
        gk = g if keepdims else reshape(g, norm.shape)
        return (gk * x / (n + safe),)

    return _make(out, (x,), grad_fn, "l2_norm")


def softmax(x, axis=-1):
    x = constant(x)
    shift = x.data.max(axis=axis, keepdims=True)
    e = exp(x - shift)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    x = constant(x)
    shift = x.data.max(axis=axis, keepdims=True)
    z = x - shift
    return z - log(exp(z).sum(axis=axis, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Mean negative log-probability of ``labels`` (integer class indices)."""
    logits = constant(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}"
        )
    n, c = logits.shape
    if n == 0:
        raise ShapeError("softmax_cross_entropy: empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"softmax_cross_entropy: label outside [0, {c})")
    data = logits.data
    shift = data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(data - shift).sum(axis=1)) + shift[:, 0]
    loss = np.mean(lse - data[np.arange(n), labels])
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0

    def grad_fn(g):
        return (g * (softmax(logits, axis=1) - onehot) * (1.0 / n),)

    return _make(np.asarray(loss), (logits,), grad_fn, "softmax_cross_entropy")


def squared_error(a, b):
    """Sum of squared differences."""
    d = sub(a, b)
    return square(d).sum()


# ---------------------------------------------------------------------------
# reverse sweep


def _topo_order(root):
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _check_scalar(output):
    if not isinstance(output, Tensor) or output.size != 1:
        shape = getattr(output, "shape", None)
        raise ShapeError(f"backward: expected a scalar output, got shape {shape}")


def _sweep(output, create_graph):
    grads = {id(output): Tensor(np.ones_like(output.data))}
    order = _topo_order(output)
    with _grad_mode(create_graph):
        for node in reversed(order):
            g = grads.pop(id(node), None) if node.grad_fn is not None else grads.get(id(node))
            if g is None or node.grad_fn is None:
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)
    return grads, order


def grad(output, inputs, create_graph=False, allow_unused=False):
    """Gradients of a scalar ``output`` with respect to each of ``inputs``.

    With ``create_graph`` the returned tensors carry their own graph and can
    be differentiated again.
    """
    _check_scalar(output)
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    if not output.requires_grad:
        if allow_unused:
            out = [Tensor(np.zeros_like(x.data)) for x in inputs]
            return out[0] if single else out
        raise ValueError("grad: output does not depend on any tensor requiring grad")
    grads, _ = _sweep(output, create_graph)
    result = []
    for x in inputs:
        g = grads.get(id(x))
        if g is None:
            if not allow_unused:
                raise ValueError(f"grad: input {x!r} is not an ancestor of the output")
            g = Tensor(np.zeros_like(x.data))
        result.append(g)
    return result[0] if single else result


def backward(output):
    """Gradient map ``{leaf tensor: ndarray}`` for every requires-grad leaf."""
    _check_scalar(output)
    if not output.requires_grad:
        return {}
    grads, order = _sweep(output, create_graph=False)
    return {n: grads[id(n)].data for n in order if n.grad_fn is None and id(n) in grads}


def input_gradient(output, x):
    """Differentiable gradient of scalar ``output`` with respect to ``x``."""
    return grad(output, [x], create_graph=True)[0]
