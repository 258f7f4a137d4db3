"""Dense float64 tensors with reverse-mode autodiff on an explicit tape.

Ops record backward closures onto the innermost active ``Tape``. The tape
is a Wengert list: nodes are appended in execution order, so walking it in
reverse is already a valid topological order. One tape lives for one
forward/backward pair and is dropped afterwards; there are no higher-order
gradients.

Gradients accumulate into ``Tensor.grad`` buffers. Leaf tensors keep their
accumulated gradient across ``backward`` calls (callers reset explicitly);
intermediate gradients are cleared at the start of every backward pass.
"""

import numpy as np

from . import kernels
from .errors import DataError, EmptyLossError, ShapeError

IGNORE_ID = -1

_TAPES = []


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    is_param marks model parameters so they stay discoverable (for
    checkpointing) even after freezing drops requires_grad.
    """

    __slots__ = ("data", "grad", "requires_grad", "is_param")

    def __init__(self, data, requires_grad=False, is_param=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.is_param = bool(is_param)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of ops for one forward pass."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def output_shapes(self):
        """Shapes of every value produced on this tape (leaves excluded)."""
        return [node[0].data.shape for node in self.nodes]

    def backward(self, loss):
        """Populate grads of every reachable requires_grad leaf with dLoss/dLeaf."""
        if loss.data.ndim != 0:
            raise ShapeError(
                f"backward needs a scalar loss, got shape {loss.data.shape}"
            )
        for out, _ in self.nodes:
            out.grad = None
        loss.grad = np.ones((), dtype=np.float64)
        for out, bwd in reversed(self.nodes):
            if out.grad is not None:
                bwd(out.grad)


def _tape():
    return _TAPES[-1] if _TAPES else None


def recording():
    return bool(_TAPES)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, *inputs):
    out = Tensor(data)
    out.requires_grad = any(i.requires_grad for i in inputs)
    return out


def _push(out, bwd):
    tape = _tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append((out, bwd))


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data + b.data, a, b)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    _push(out, bwd)
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data - b.data, a, b)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, -_unbroadcast(g, b.data.shape))

    _push(out, bwd)
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data * b.data, a, b)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    _push(out, bwd)
    return out


def neg(a):
    out = _make(-a.data, a)

    def bwd(g):
        _accum(a, -g)

    _push(out, bwd)
    return out


def scale(a, s):
    """a * python-float s (no tensor wrapping for the constant)."""
    s = float(s)
    out = _make(a.data * s, a)

    def bwd(g):
        _accum(a, g * s)

    _push(out, bwd)
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = _make(y, a)

    def bwd(g):
        _accum(a, g * (1.0 - y * y))

    _push(out, bwd)
    return out


def sigmoid(a):
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = _make(y, a)

    def bwd(g):
        _accum(a, g * y * (1.0 - y))

    _push(out, bwd)
    return out


def gelu(a):
    x = np.ascontiguousarray(a.data)
    out = _make(kernels.gelu(x), a)

    def bwd(g):
        _accum(a, kernels.gelu_grad(np.ascontiguousarray(g), x))

    _push(out, bwd)
    return out


def dropout(a, rate, rng, train):
    """Inverted dropout; identity when not training or rate == 0."""
    if not train or rate <= 0.0:
        return a
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = _make(a.data * mask, a)

    def bwd(g):
        _accum(a, g * mask)

    _push(out, bwd)
    return out


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(a, shape):
    out = _make(a.data.reshape(shape), a)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    _push(out, bwd)
    return out


def transpose(a, axes):
    axes = tuple(axes)
    out = _make(np.ascontiguousarray(a.data.transpose(axes)), a)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, g.transpose(inv))

    _push(out, bwd)
    return out


def narrow(a, axis, start, length):
    """Contiguous slice along one axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _make(np.ascontiguousarray(a.data[idx]), a)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    _push(out, bwd)
    return out


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), *tensors)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + n)
            _accum(t, g[tuple(idx)])
            offset += n

    _push(out, bwd)
    return out


def stack_time(tensors):
    """Stack T tensors of shape (B, H) into (B, T, H)."""
    out = _make(np.stack([t.data for t in tensors], axis=1), *tensors)

    def bwd(g):
        for t_idx, t in enumerate(tensors):
            _accum(t, g[:, t_idx])

    _push(out, bwd)
    return out


def pad_time(a, left, right):
    """Zero-pad axis 1 of (B, T, H) by `left` / `right` positions."""
    if left == 0 and right == 0:
        return a
    b, t, h = a.data.shape
    data = np.zeros((b, t + left + right, h), dtype=np.float64)
    data[:, left : left + t] = a.data
    out = _make(data, a)

    def bwd(g):
        _accum(a, g[:, left : left + t])

    _push(out, bwd)
    return out


def flip_padded(a, lengths):
    """Reverse each row of (B, T, H) within its true length; pads stay put.

    Self-inverse on the valid prefix, so the backward pass is the same flip.
    """
    lengths = np.asarray(lengths)

    def do_flip(x):
        y = x.copy()
        for i, n in enumerate(lengths):
            y[i, :n] = x[i, n - 1 :: -1] if n > 0 else x[i, :0]
        return y

    out = _make(do_flip(a.data), a)

    def bwd(g):
        _accum(a, do_flip(g))

    _push(out, bwd)
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(a):
    out = _make(np.asarray(a.data.sum()), a)

    def bwd(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    _push(out, bwd)
    return out


def sum_axis(a, axis, keepdims=False):
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), a)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    _push(out, bwd)
    return out


def mean_axis(a, axis, keepdims=False):
    n = a.data.shape[axis]
    return scale(sum_axis(a, axis, keepdims), 1.0 / n)


def max_axis(a, axis):
    """Max over one axis; gradient flows to the (first) argmax positions."""
    idx = a.data.argmax(axis=axis)
    out = _make(a.data.max(axis=axis), a)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(
            full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
        )
        _accum(a, full)

    _push(out, bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs rank >= 2 operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner extents disagree: {a.data.shape} @ {b.data.shape}"
        )
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(
            f"matmul batch extents incompatible: {a.data.shape} @ {b.data.shape}"
        ) from exc
    out = _make(data, a, b)

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                k = a.data.shape[-1]
                n = g.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                gb = _unbroadcast(gb, b.data.shape)
            _accum(b, gb)

    _push(out, bwd)
    return out


def gather_rows(table, ids, pad_id=-1):
    """Row lookup: out[..., :] = table[ids[...], :].

    ids is an integer ndarray. Positions holding `pad_id` still produce
    their table row in the output but contribute no gradient to the table.
    """
    ids = np.asarray(ids, dtype=np.int64)
    v = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        bad = int(ids.max() if ids.max() >= v else ids.min())
        raise DataError(f"id {bad} out of range for table with {v} rows")
    out = _make(table.data[ids], table)

    def bwd(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        h = table.data.shape[1]
        kernels.embedding_grad(
            table.grad,
            ids.reshape(-1),
            np.ascontiguousarray(g).reshape(-1, h),
            pad_id,
        )

    _push(out, bwd)
    return out


# ---------------------------------------------------------------------------
# normalization / loss
# ---------------------------------------------------------------------------


def softmax(a, axis=-1):
    """Stable softmax along `axis`; slices sum to 1."""
    axis = axis % a.data.ndim
    last = a.data.ndim - 1
    x = a.data if axis == last else np.moveaxis(a.data, axis, last)
    lead = x.shape[:-1]
    x2 = np.ascontiguousarray(x).reshape(-1, x.shape[-1])
    y2 = kernels.softmax2d(x2)
    y = y2.reshape(lead + (x.shape[-1],))
    if axis != last:
        y = np.moveaxis(y, last, axis)
    out = _make(np.ascontiguousarray(y), a)

    def bwd(g):
        gg = g if axis == last else np.moveaxis(g, axis, last)
        gg2 = np.ascontiguousarray(gg).reshape(-1, x.shape[-1])
        dx2 = kernels.softmax2d_grad(gg2, y2)
        dx = dx2.reshape(lead + (x.shape[-1],))
        if axis != last:
            dx = np.moveaxis(dx, last, axis)
        _accum(a, dx)

    _push(out, bwd)
    return out


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    h = a.data.shape[-1]
    if gamma.data.shape != (h,) or beta.data.shape != (h,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature width {h}"
        )
    x2 = np.ascontiguousarray(a.data).reshape(-1, h)
    y2, mean, rstd = kernels.layer_norm(x2, gamma.data, beta.data, eps)
    out = _make(y2.reshape(a.data.shape), a, gamma, beta)

    def bwd(g):
        g2 = np.ascontiguousarray(g).reshape(-1, h)
        dx, dgamma, dbeta = kernels.layer_norm_grad(g2, x2, gamma.data, mean, rstd)
        _accum(a, dx.reshape(a.data.shape))
        _accum(gamma, dgamma)
        _accum(beta, dbeta)

    _push(out, bwd)
    return out


def cross_entropy(logits, labels, ignore_id=IGNORE_ID):
    """Mean negative log-softmax probability over non-ignored positions.

    logits (N, V), labels int (N,) with entries in [0, V) or ignore_id.
    Raises EmptyLossError when every position is ignored.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects (N, V) logits, got {logits.data.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"cross_entropy labels shape {labels.shape} does not match "
            f"logits {logits.data.shape}"
        )
    v = logits.data.shape[1]
    live = labels[labels != ignore_id]
    if live.size and (live.min() < 0 or live.max() >= v):
        raise DataError(f"label {int(live.max())} out of range for {v} classes")
    x = np.ascontiguousarray(logits.data)
    loss_sum, count, probs = kernels.cross_entropy(x, labels, ignore_id)
    if count == 0:
        raise EmptyLossError("cross_entropy: every position carries the ignore id")
    out = _make(np.asarray(loss_sum / count), logits)

    def bwd(g):
        _accum(
            logits,
            kernels.cross_entropy_grad(probs, labels, ignore_id, count, float(g)),
        )

    _push(out, bwd)
    return out
