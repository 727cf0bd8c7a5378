"""Minimal reverse-mode automatic differentiation over numpy arrays.

The engine is deliberately small: a ``Var`` wraps an ndarray and remembers
the primitive that produced it together with a vector-Jacobian closure.
``backward`` linearises the graph that reaches the root into a ``Tape``
(a topologically ordered record of primitives) and runs one reverse sweep,
visiting each node exactly once.

Only the primitives needed by the power-control pipeline are provided:
broadcasting arithmetic, 2-D matmul, reductions, gather/scatter by index,
and the element-wise maps used by the BiLSTM policy and the SINR/SE/soft-min
chain. Every primitive is verified against central finite differences in
the test suite.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Var",
    "Tape",
    "backward",
    "constant",
    "leaf",
    "matmul",
    "sum_",
    "reshape",
    "transpose",
    "slice_cols",
    "exp",
    "log",
    "log1p",
    "sqrt",
    "tanh",
    "sigmoid",
    "softplus",
    "selu",
    "pow10_clamp",
    "maximum_const",
    "where",
    "take",
    "segment_sum",
    "stack",
    "concat",
    "logsumexp",
]

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805
_LN10 = np.log(10.0)


class Var:
    """Node of the computation graph.

    ``requires_grad`` marks nodes the reverse sweep must reach (leaves and
    anything computed from one). Constants are cheap: ops whose inputs are
    all constants produce constants and record nothing.
    """

    __slots__ = ("value", "grad", "parents", "vjp", "requires_grad", "op")

    def __init__(self, value, parents=(), vjp=None, requires_grad=True, op="leaf"):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    # -- operator sugar -------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape}, grad={self.requires_grad})"


def constant(value):
    """Wrap an array as a non-differentiated graph input."""
    return Var(value, requires_grad=False, op="const")


def leaf(value):
    """Wrap an array as a differentiated graph input (a parameter)."""
    return Var(value, requires_grad=True, op="param")


def _as_var(x):
    return x if isinstance(x, Var) else constant(x)


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(value, parents, vjp, op):
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Var(value, requires_grad=False, op=op)
    return Var(value, parents=parents, vjp=vjp, requires_grad=True, op=op)


class Tape:
    """Topologically ordered record of the primitives reaching a root Var."""

    def __init__(self, root: Var):
        records = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in visited:
                continue
            if expanded:
                visited.add(id(node))
                records.append(node)
            else:
                stack.append((node, True))
                for p in node.parents:
                    if p.requires_grad and id(p) not in visited:
                        stack.append((p, False))
        self.records = records  # parents always precede children

    def __len__(self):
        return len(self.records)


def backward(root: Var, seed=None) -> Tape:
    """Reverse sweep from ``root``; accumulates cotangents into ``.grad``.

    Returns the tape so callers can inspect the visited record. Each node is
    processed exactly once, in reverse topological order.
    """
    tape = Tape(root)
    grads = {id(root): np.ones_like(root.value) if seed is None else np.asarray(seed)}
    for node in reversed(tape.records):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return tape


# -- broadcasting arithmetic -------------------------------------------


def add(a, b):
    a, b = _as_var(a), _as_var(b)
    val = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return _make(val, (a, b), vjp, "add")


def sub(a, b):
    a, b = _as_var(a), _as_var(b)
    val = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return _make(val, (a, b), vjp, "sub")


def mul(a, b):
    a, b = _as_var(a), _as_var(b)
    val = a.value * b.value

    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return _make(val, (a, b), vjp, "mul")


def div(a, b):
    a, b = _as_var(a), _as_var(b)
    val = a.value / b.value

    def vjp(g):
        return (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        )

    return _make(val, (a, b), vjp, "div")


def matmul(a, b):
    a, b = _as_var(a), _as_var(b)
    val = a.value @ b.value

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return _make(val, (a, b), vjp, "matmul")


# -- reductions and shape ops ------------------------------------------


def sum_(x, axis=None, keepdims=False):
    x = _as_var(x)
    val = x.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.value.shape).copy(),)

    return _make(val, (x,), vjp, "sum")


def reshape(x, shape):
    x = _as_var(x)
    val = x.value.reshape(shape)

    def vjp(g):
        return (g.reshape(x.value.shape),)

    return _make(val, (x,), vjp, "reshape")


def transpose(x):
    x = _as_var(x)
    val = x.value.T

    def vjp(g):
        return (g.T,)

    return _make(val, (x,), vjp, "transpose")


def slice_cols(x, a, b):
    """Columns [a, b) of a 2-D Var."""
    x = _as_var(x)
    val = x.value[:, a:b]

    def vjp(g):
        gx = np.zeros_like(x.value)
        gx[:, a:b] = g
        return (gx,)

    return _make(val, (x,), vjp, "slice_cols")


def stack(xs):
    """Stack equally shaped Vars along a new leading axis."""
    xs = [_as_var(x) for x in xs]
    val = np.stack([x.value for x in xs])

    def vjp(g):
        return tuple(g[i] for i in range(len(xs)))

    return _make(val, xs, vjp, "stack")


def concat(xs):
    """Concatenate Vars along axis 0."""
    xs = [_as_var(x) for x in xs]
    val = np.concatenate([x.value for x in xs], axis=0)
    sizes = [x.value.shape[0] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(xs)))

    return _make(val, xs, vjp, "concat")


# -- indexed ops --------------------------------------------------------


def take(x, idx):
    """Gather rows (axis 0). ``idx`` is a constant integer array."""
    x = _as_var(x)
    idx = np.asarray(idx)
    val = x.value[idx]
    unique = len(np.unique(idx)) == idx.size

    def vjp(g):
        gx = np.zeros_like(x.value)
        if unique:
            gx[idx] = g
        elif x.value.ndim == 1:
            gx = np.bincount(idx, weights=g, minlength=x.value.shape[0]).astype(
                x.value.dtype
            )
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _make(val, (x,), vjp, "take")


def segment_sum(x, ids, num_segments):
    """Sum a 1-D Var into ``num_segments`` buckets given integer ids."""
    x = _as_var(x)
    ids = np.asarray(ids)
    val = np.bincount(ids, weights=x.value, minlength=num_segments).astype(
        x.value.dtype
    )

    def vjp(g):
        return (g[ids],)

    return _make(val, (x,), vjp, "segment_sum")


# -- element-wise maps ---------------------------------------------------


def exp(x):
    x = _as_var(x)
    val = np.exp(x.value)
    return _make(val, (x,), lambda g: (g * val,), "exp")


def log(x):
    x = _as_var(x)
    val = np.log(x.value)
    return _make(val, (x,), lambda g: (g / x.value,), "log")


def log1p(x):
    x = _as_var(x)
    val = np.log1p(x.value)
    return _make(val, (x,), lambda g: (g / (1.0 + x.value),), "log1p")


def sqrt(x):
    x = _as_var(x)
    val = np.sqrt(x.value)
    # guarded at 0: exact inputs are positive (softplus outputs); the floor
    # only matters when float32 underflows the primal.
    denom = np.maximum(val, 1e-150 if val.dtype == np.float64 else 1e-12)
    return _make(val, (x,), lambda g: (g * 0.5 / denom,), "sqrt")


def tanh(x):
    x = _as_var(x)
    val = np.tanh(x.value)
    return _make(val, (x,), lambda g: (g * (1.0 - val * val),), "tanh")


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    x = _as_var(x)
    val = _sigmoid(x.value)
    return _make(val, (x,), lambda g: (g * val * (1.0 - val),), "sigmoid")


def softplus(x):
    """log(1 + e^x), evaluated in the overflow-safe split form."""
    x = _as_var(x)
    v = x.value
    val = np.where(v > 0, v + np.log1p(np.exp(-np.abs(v))), np.log1p(np.exp(np.minimum(v, 0))))
    return _make(val, (x,), lambda g: (g * _sigmoid(x.value),), "softplus")


def selu(x):
    x = _as_var(x)
    v = x.value
    neg = SELU_ALPHA * np.expm1(np.minimum(v, 0.0))
    val = SELU_LAMBDA * np.where(v > 0, v, neg)
    dneg = SELU_ALPHA * np.exp(np.minimum(v, 0.0))
    deriv = SELU_LAMBDA * np.where(v > 0, 1.0, dneg)
    return _make(val, (x,), lambda g: (g * deriv,), "selu")


def pow10_clamp(x, lo=-8.0, hi=8.0):
    """10**clip(x, lo, hi); derivative is ln(10)*10^x inside, 0 when clamped."""
    x = _as_var(x)
    inside = (x.value >= lo) & (x.value <= hi)
    val = np.power(10.0, np.clip(x.value, lo, hi))
    return _make(val, (x,), lambda g: (g * _LN10 * val * inside,), "pow10_clamp")


def maximum_const(x, c):
    x = _as_var(x)
    val = np.maximum(x.value, c)
    mask = x.value >= c
    return _make(val, (x,), lambda g: (g * mask,), "maximum_const")


def where(mask, a, b):
    """Select per element with a constant boolean mask (branch subgradient)."""
    a, b = _as_var(a), _as_var(b)
    mask = np.asarray(mask)
    val = np.where(mask, a.value, b.value)

    def vjp(g):
        return (
            _unbroadcast(g * mask, a.value.shape),
            _unbroadcast(g * ~mask, b.value.shape),
        )

    return _make(val, (a, b), vjp, "where")


def logsumexp(x, axis):
    """Max-shifted log-sum-exp along ``axis`` (the shift is detached)."""
    x = _as_var(x)
    m = np.max(x.value, axis=axis, keepdims=True)
    shifted = exp(sub(x, constant(m)))
    return add(log(sum_(shifted, axis=axis)), constant(np.squeeze(m, axis=axis)))
