"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Trace` records one forward pass. Tensors created from a trace
(leaves) or derived from traced tensors append a node per primitive op;
:func:`backward` sweeps the tape once in reverse and consumes it.

Tensors without a trace behave as plain constants, so the same op functions
double as a numeric library.

Besides summed gradients, the sweep can emit per-example parameter
gradients. This works because every op in the model is row-wise in the
leading batch axis; the only cross-example mixing is the final batch mean,
which the decomposition absorbs.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    EmbeddingLeafMissing,
    LossNotScalar,
    NonFiniteResult,
    ShapeMismatch,
    TraceAlreadyConsumed,
)

INPUT_LEAF = "input"


class Tensor:
    """Dense float64 array, optionally attached to a trace node."""

    __slots__ = ("data", "trace", "index")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, trace=None, index=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.trace = trace
        self.index = index

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = "traced" if self.trace is not None else "const"
        return f"Tensor({tag}, shape={self.shape})"

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


@dataclass
class _Node:
    op: str
    inputs: tuple
    vjp: object = None
    vjp_example: object = None
    leaf: str = None


class Trace:
    """Append-only tape for a single forward pass."""

    def __init__(self):
        self.nodes = []
        self.leaves = {}
        self.shapes = {}
        self.consumed = False

    def _leaf(self, name, value):
        if self.consumed:
            raise TraceAlreadyConsumed("cannot register leaves on a consumed trace")
        if name in self.leaves:
            return Tensor(value, self, self.leaves[name])
        data = np.array(value, dtype=np.float64)
        _check_finite(data, "leaf")
        self.nodes.append(_Node("leaf", (), leaf=name))
        idx = len(self.nodes) - 1
        self.leaves[name] = idx
        self.shapes[name] = data.shape
        return Tensor(data, self, idx)

    def param(self, name, value):
        """Register (or fetch) a parameter leaf."""
        if name == INPUT_LEAF:
            raise ValueError(f"{INPUT_LEAF!r} is reserved for the embedding input")
        return self._leaf(name, value)

    def embedding_input(self, value):
        """Register the input-embedding leaf used for input gradients."""
        return self._leaf(INPUT_LEAF, value)

    def __len__(self):
        return len(self.nodes)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(data, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteResult(f"{op} produced a non-finite value")


def _record(op, out, inputs, vjp, vjp_example=None):
    _check_finite(out, op)
    trace = None
    for t in inputs:
        if t.trace is not None:
            if trace is None:
                trace = t.trace
            elif t.trace is not trace:
                raise ValueError("inputs belong to different traces")
    if trace is None:
        return Tensor(out)
    if trace.consumed:
        raise TraceAlreadyConsumed("trace has already been differentiated")
    idx = tuple(t.index if t.trace is trace else None for t in inputs)
    trace.nodes.append(_Node(op, idx, vjp, vjp_example))
    return Tensor(out, trace, len(trace.nodes) - 1)


# ---------------------------------------------------------------- broadcasting


def _broadcast_shape(a, b, op):
    # leading-dimension broadcast only: one shape must be a suffix of the other
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if len(sa) >= len(sb) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sb) > len(sa) and sb[len(sb) - len(sa):] == sa:
        return sb
    raise ShapeMismatch(f"{op}: cannot broadcast {sa} with {sb}")


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra))) if extra else g


def _per_example(g, shape):
    # keep axis 0 (batch), sum the remaining broadcast axes
    extra = g.ndim - len(shape)
    if extra < 1:
        return None
    return g.sum(axis=tuple(range(1, extra))) if extra > 1 else g


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        lambda g: (_per_example(g, sa), _per_example(g, sb)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)),
        lambda g: (_per_example(g, sa), _neg_or_none(_per_example(g, sb))),
    )


def _neg_or_none(x):
    return None if x is None else -x


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(
        "mul",
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        lambda g: (_per_example(g * bd, ad.shape), _per_example(g * ad, bd.shape)),
    )


def relu(t):
    t = as_tensor(t)
    pos = t.data > 0
    return _record("relu", np.where(pos, t.data, 0.0), (t,), lambda g: (np.where(pos, g, 0.0),))


def tanh(t):
    t = as_tensor(t)
    out = np.tanh(t.data)
    return _record("tanh", out, (t,), lambda g: (g * (1.0 - out * out),))


def exp(t):
    t = as_tensor(t)
    out = np.exp(t.data)
    return _record("exp", out, (t,), lambda g: (g * out,))


def log(t):
    t = as_tensor(t)
    x = t.data
    if np.any(x <= 0):
        raise NonFiniteResult("log of a non-positive value")
    return _record("log", np.log(x), (t,), lambda g: (g / x,))


def clamp_min(t, lo):
    """max(t, lo); the gradient is zero where the floor is active."""
    t = as_tensor(t)
    keep = t.data >= lo
    return _record("clamp_min", np.where(keep, t.data, lo), (t,), lambda g: (np.where(keep, g, 0.0),))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """``a[..., k] @ b[k, m]``; leading dims of ``a`` are batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    k, m = bd.shape

    def vjp(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, k).T @ g.reshape(-1, m)
        return ga, gb

    def vjp_example(g):
        if ad.ndim < 2:
            return None, None
        batch = ad.shape[0]
        gb = np.einsum("btk,btm->bkm", ad.reshape(batch, -1, k), g.reshape(batch, -1, m))
        return None, gb

    return _record("matmul", ad @ bd, (a, b), vjp, vjp_example)


def take_rows(table, ids):
    """Embedding lookup: ``table[ids]`` for an integer id array."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeMismatch(f"take_rows: table must be 2-D, got {table.shape}")
    n_rows = table.shape[0]
    return _record(
        "take_rows",
        table.data[ids],
        (table,),
        lambda g: (_kernels.scatter_rows(n_rows, ids, g),),
        lambda g: (_kernels.scatter_rows_per_example(n_rows, ids, g),),
    )


def masked_mean(x, weights):
    """Weighted mean over axis 1 of ``x[B, T, D]`` with constant ``weights[B, T]``."""
    x = as_tensor(x)
    w = np.asarray(weights, dtype=np.float64)
    if x.ndim != 3 or w.shape != x.shape[:2]:
        raise ShapeMismatch(f"masked_mean: x {x.shape} weights {w.shape}")
    denom = w.sum(axis=1)
    if np.any(denom <= 0):
        raise ShapeMismatch("masked_mean: a row has no unmasked positions")
    scale = (w / denom[:, None])[:, :, None]
    return _record(
        "masked_mean",
        (x.data * scale).sum(axis=1),
        (x,),
        lambda g: (g[:, None, :] * scale,),
    )


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    return axis % ndim if ndim else axis


def sum(t, axis=None):  # noqa: A001 - mirrors numpy
    t = as_tensor(t)
    shape = t.shape
    ax = _norm_axis(axis, t.ndim)

    def vjp(g):
        if ax is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return _record("sum", t.data.sum(axis=ax), (t,), vjp)


def mean(t, axis=None):
    t = as_tensor(t)
    n = t.data.size if axis is None else t.shape[_norm_axis(axis, t.ndim)]
    if n == 0:
        raise ShapeMismatch("mean of an empty tensor")
    return mul(sum(t, axis), 1.0 / n)


def l2_norm(t):
    t = as_tensor(t)
    if t.data.size == 0:
        raise ShapeMismatch("l2_norm of an empty tensor")
    x = t.data
    nrm = float(np.sqrt(np.sum(x * x)))

    def vjp(g):
        if nrm == 0.0:
            return (np.zeros_like(x),)
        return (g * x / nrm,)

    return _record("l2_norm", np.array(nrm), (t,), vjp)


def log_softmax(logits, axis=-1):
    t = as_tensor(logits)
    z = t.data
    ax = axis % z.ndim
    shifted = z - z.max(axis=ax, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    soft = np.exp(out)
    return _record(
        "log_softmax",
        out,
        (t,),
        lambda g: (g - soft * g.sum(axis=ax, keepdims=True),),
    )


def softmax(logits, axis=-1):
    return exp(log_softmax(logits, axis))


# ---------------------------------------------------------------- backward


@dataclass
class BackwardResult:
    grads: dict
    per_example: dict = field(default_factory=dict)
    watched: dict = field(default_factory=dict)


def backward_full(trace, loss, *, per_example=False, watch=()):
    """Reverse sweep returning summed, optionally per-example, and watched grads.

    ``per_example`` yields, for each parameter leaf, an array ``[B, *shape]``
    whose sum over axis 0 is the ordinary gradient (up to rounding). The
    ordinary gradient is always produced by the plain vjp path so enabling
    per-example output never perturbs it.
    """
    if trace.consumed:
        raise TraceAlreadyConsumed("backward called twice on the same trace")
    if not isinstance(loss, Tensor) or loss.trace is not trace:
        raise LossNotScalar("loss must be a tensor recorded in this trace")
    if loss.data.shape != ():
        raise LossNotScalar(f"loss must be scalar, got shape {loss.shape}")
    trace.consumed = True

    nodes = trace.nodes
    grads = [None] * len(nodes)
    grads[loss.index] = np.ones((), dtype=np.float64)
    leaf_of = {i: name for name, i in trace.leaves.items()}
    ex = {}

    for i in range(loss.index, -1, -1):
        g = grads[i]
        node = nodes[i]
        if g is None or node.vjp is None:
            continue
        local = node.vjp(g)
        for j, gj in zip(node.inputs, local):
            if j is None or gj is None:
                continue
            grads[j] = gj if grads[j] is None else grads[j] + gj
        if per_example:
            targets = [j for j in node.inputs if j is not None and j in leaf_of and leaf_of[j] != INPUT_LEAF]
            if targets:
                pex = node.vjp_example(g) if node.vjp_example is not None else None
                for j, pj in zip(node.inputs, pex or (None,) * len(node.inputs)):
                    if j not in targets:
                        continue
                    if pj is None:
                        raise ValueError(f"per-example gradient unavailable through op {node.op!r}")
                    name = leaf_of[j]
                    ex[name] = pj if name not in ex else ex[name] + pj

    out = {
        name: grads[i] if grads[i] is not None else np.zeros(trace.shapes[name])
        for name, i in trace.leaves.items()
    }
    watched = {}
    for t in watch:
        watched[t.index] = grads[t.index] if grads[t.index] is not None else np.zeros(t.shape)
    return BackwardResult(out, ex, watched)


def backward(trace, loss):
    """Gradients of a scalar loss for every registered leaf; unreachable ones are zero."""
    return backward_full(trace, loss).grads


def grad_wrt_embeddings(trace, loss):
    """Gradient of ``loss`` with respect to the registered embedding input."""
    if INPUT_LEAF not in trace.leaves:
        raise EmbeddingLeafMissing("no embedding input registered in this trace")
    return backward(trace, loss)[INPUT_LEAF]

