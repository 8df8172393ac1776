"""Minimal reverse-mode differentiation over a closed set of array operations.

Values are numpy arrays.  Wrapping an array in :class:`Var` marks it as a
graph leaf (:class:`Param` for named trainables).  Operations record vjp
edges only while a ``with record():`` block is active on the current thread,
so plain evaluation stays pure and allocation-light: outside a recording
block every primitive unwraps its inputs and returns a bare ndarray.

One tape per thread.  Backward mutates ``.grad`` accumulators and therefore
needs exclusive access to the parameters involved; forward never mutates
shared state.
"""

from __future__ import annotations

import threading

import numpy as np

_STATE = threading.local()


def is_recording():
    return getattr(_STATE, "recording", False)


class record:
    """Context manager enabling gradient recording on the current thread."""

    def __enter__(self):
        self._prev = is_recording()
        _STATE.recording = True
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.recording = self._prev
        return False


class Var:
    """Graph node: a value, a gradient accumulator, and vjp edges."""

    __slots__ = ("value", "grad", "parents", "op_kind")

    def __init__(self, value, parents=(), op_kind="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.op_kind = op_kind

    def __repr__(self):
        return f"Var(op={self.op_kind}, shape={self.value.shape})"


class Param(Var):
    """Named trainable leaf; stored C-contiguous so in-place edits are safe."""

    __slots__ = ("name",)

    def __init__(self, value, name=""):
        super().__init__(np.ascontiguousarray(value, dtype=np.float64),
                         op_kind="param")
        self.name = name


def value_of(x):
    """Bare ndarray (or scalar) behind ``x``, whether or not it is a Var."""
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    # Sum a gradient back down to `shape` after numpy broadcasting.
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(value, op_kind, edges):
    live = tuple((p, vjp) for p, vjp in edges if isinstance(p, Var))
    if not (is_recording() and live):
        return value
    return Var(value, live, op_kind)


# ---------------------------------------------------------------------------
# elementwise and linear algebra
# ---------------------------------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = np.add(av, bv)
    return _make(out, "add", (
        (a, lambda g: _unbroadcast(g, np.shape(av))),
        (b, lambda g: _unbroadcast(g, np.shape(bv))),
    ))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = np.subtract(av, bv)
    return _make(out, "sub", (
        (a, lambda g: _unbroadcast(g, np.shape(av))),
        (b, lambda g: _unbroadcast(-g, np.shape(bv))),
    ))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = np.multiply(av, bv)
    return _make(out, "mul", (
        (a, lambda g: _unbroadcast(g * bv, np.shape(av))),
        (b, lambda g: _unbroadcast(g * av, np.shape(bv))),
    ))


def _matmul_vjp_a(g, av, bv):
    if av.ndim == 1 and bv.ndim == 1:
        return g * bv
    if bv.ndim == 1:
        return np.outer(g, bv)
    return g @ bv.T


def _matmul_vjp_b(g, av, bv):
    if av.ndim == 1 and bv.ndim == 1:
        return g * av
    if av.ndim == 1:
        return np.outer(av, g)
    return av.T @ g


def matmul(a, b):
    av = np.asarray(value_of(a))
    bv = np.asarray(value_of(b))
    if av.ndim > 2 or bv.ndim > 2:
        raise ValueError(
            f"matmul supports 1-D/2-D operands, got {av.shape} @ {bv.shape}"
        )
    out = av @ bv
    return _make(out, "matmul", (
        (a, lambda g: _matmul_vjp_a(np.asarray(g), av, bv)),
        (b, lambda g: _matmul_vjp_b(np.asarray(g), av, bv)),
    ))


def transpose(a):
    av = np.asarray(value_of(a))
    if av.ndim != 2:
        raise ValueError(f"transpose expects a matrix, got shape {av.shape}")
    return _make(av.T, "transpose", ((a, lambda g: np.asarray(g).T),))


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def tanh(a):
    out = np.tanh(value_of(a))
    return _make(out, "tanh", ((a, lambda g: g * (1.0 - out * out)),))


def relu(a):
    av = value_of(a)
    out = np.maximum(av, 0.0)
    return _make(out, "relu", ((a, lambda g: g * (av > 0.0)),))


def softmax(a, axis=-1):
    """Numerically stable softmax; rows are positive and sum to one."""
    av = value_of(a)
    shifted = av - np.max(av, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return out * (g - dot)

    return _make(out, "softmax", ((a, vjp),))


def signed_sqrt(a, eps=1e-12):
    av = value_of(a)
    root = np.sqrt(np.abs(av))
    out = np.sign(av) * root
    return _make(out, "signed-sqrt", ((a, lambda g: g * 0.5 / (root + eps)),))


def l2_normalize(a, axis=-1, eps=1e-12):
    av = value_of(a)
    norm = np.sqrt(np.sum(av * av, axis=axis, keepdims=True) + eps)
    out = av / norm

    def vjp(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (g - out * dot) / norm

    return _make(out, "l2-normalize", ((a, vjp),))


# ---------------------------------------------------------------------------
# shape and reduction
# ---------------------------------------------------------------------------

def reshape(a, shape):
    av = np.asarray(value_of(a))
    src = av.shape
    return _make(av.reshape(shape), "reshape",
                 ((a, lambda g: np.asarray(g).reshape(src)),))


def reduce_sum(a, axis=None, keepdims=False):
    av = np.asarray(value_of(a))
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape)

    return _make(out, "sum-pool", ((a, vjp),))


def reduce_max(a, axis, keepdims=False):
    """Max along one axis; the subgradient flows to the first argmax."""
    av = np.asarray(value_of(a))
    out = np.max(av, axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        idx = np.expand_dims(np.argmax(av, axis=axis), axis)
        mask = np.zeros_like(av)
        np.put_along_axis(mask, idx, 1.0, axis)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return mask * g

    return _make(out, "max-pool", ((a, vjp),))


def sum_pool(a, window):
    """Sum contiguous windows of ``window`` entries along the last axis."""
    shape = np.shape(value_of(a))
    if shape[-1] % window != 0:
        raise ValueError(
            f"last dimension {shape[-1]} is not a multiple of window {window}"
        )
    groups = shape[-1] // window
    return reduce_sum(reshape(a, shape[:-1] + (groups, window)), axis=-1)


def _slice_key(ndim, axis, start, length):
    key = [slice(None)] * ndim
    key[axis] = slice(start, start + length)
    return tuple(key)


def concat(parts, axis=0):
    values = [np.asarray(value_of(p)) for p in parts]
    out = np.concatenate(values, axis=axis)
    ax = axis % out.ndim
    edges = []
    start = 0
    for part, pv in zip(parts, values):
        size = pv.shape[ax]
        key = _slice_key(out.ndim, ax, start, size)
        edges.append((part, lambda g, key=key: np.asarray(g)[key]))
        start += size
    return _make(out, "concatenate", tuple(edges))


def narrow(a, axis, start, length):
    """Contiguous slice of ``length`` entries from ``start`` along ``axis``."""
    av = np.asarray(value_of(a))
    ax = axis % av.ndim
    if start < 0 or start + length > av.shape[ax]:
        raise ValueError(
            f"slice [{start}:{start + length}) out of range on axis {ax} "
            f"of shape {av.shape}"
        )
    key = _slice_key(av.ndim, ax, start, length)

    def vjp(g):
        full = np.zeros_like(av)
        full[key] = g
        return full

    return _make(av[key], "slice", ((a, vjp),))


# ---------------------------------------------------------------------------
# fusion-specific primitives
# ---------------------------------------------------------------------------

def circular_convolve(a, b):
    """Circular convolution along the last axis via FFT.

    ``out[k] = sum_j a[j] * b[(k - j) mod d]``.  Gradients propagate as
    circular correlation with the opposite factor.
    """
    av = np.asarray(value_of(a))
    bv = np.asarray(value_of(b))
    if av.shape != bv.shape:
        raise ValueError(
            f"circular convolution needs matching shapes, got {av.shape} "
            f"and {bv.shape}"
        )
    d = av.shape[-1]
    fa = np.fft.rfft(av, axis=-1)
    fb = np.fft.rfft(bv, axis=-1)
    out = np.fft.irfft(fa * fb, n=d, axis=-1)

    def vjp_a(g):
        fg = np.fft.rfft(np.asarray(g), axis=-1)
        return np.fft.irfft(fg * np.conj(fb), n=d, axis=-1)

    def vjp_b(g):
        fg = np.fft.rfft(np.asarray(g), axis=-1)
        return np.fft.irfft(fg * np.conj(fa), n=d, axis=-1)

    return _make(out, "circular-convolve", ((a, vjp_a), (b, vjp_b)))


def sketch_project(plan, x):
    """Apply a frozen count-sketch plan as a fixed linear map."""
    xv = np.asarray(value_of(x))
    if xv.shape[-1] != plan.input_dim:
        raise ValueError(
            f"sketch plan expects input dim {plan.input_dim}, "
            f"got shape {xv.shape}"
        )
    mat = plan.matrix()
    out = xv @ mat
    return _make(out, "sketch-project", ((x, lambda g: np.asarray(g) @ mat.T),))


def softmax_cross_entropy(logits, label):
    """Cross entropy of a 1-D logit vector against an integer label."""
    lv = np.asarray(value_of(logits))
    if lv.ndim != 1:
        raise ValueError(f"logits must be 1-D, got shape {lv.shape}")
    shifted = lv - np.max(lv)
    logsumexp = np.log(np.sum(np.exp(shifted)))
    out = np.asarray(logsumexp - shifted[label])

    def vjp(g):
        p = np.exp(shifted - logsumexp)
        p[label] -= 1.0
        return p * g

    return _make(out, "cross-entropy", ((logits, vjp),))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss, params=None):
    """Accumulate gradients of a scalar loss into every reachable node.

    Returns a name-to-gradient map when ``params`` is given; parameters not
    reached by the graph get zero gradients in the map (their ``.grad`` stays
    ``None``).
    """
    if not isinstance(loss, Var):
        raise TypeError("backward needs a recorded Var; wrap the loss in record()")
    if np.size(loss.value) != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    order = _toposort(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            pg = vjp(g)
            parent.grad = pg if parent.grad is None else parent.grad + pg
    if params is None:
        return None
    return {
        name: (np.array(p.grad) if p.grad is not None else np.zeros_like(p.value))
        for name, p in params.items()
    }


def zero_grad(params):
    for p in params.values():
        p.grad = None


def find_nan_source(root):
    """Op kind of the first node whose value is non-finite while all of its
    parents are finite, scanning in topological order; ``None`` if the graph
    is finite throughout."""
    for node in _toposort(root):
        if not np.all(np.isfinite(node.value)):
            if all(np.all(np.isfinite(p.value)) for p, _ in node.parents):
                return node.op_kind
    return None
