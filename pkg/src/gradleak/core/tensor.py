"""Dense float64 tensors recorded on an append-only differentiation tape.

Every primitive's vector-Jacobian product is written with the same tensor
operations, so running `backward` with ``create_graph=True`` records the
backward computation onto the tape and its outputs can be differentiated
again (the attack differentiates a function of parameter gradients with
respect to the input).
"""
from __future__ import annotations

import contextlib

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tape:
    """Append-only list of recorded nodes.

    Nodes are appended in execution order, so walking the list backwards is
    a valid reverse topological order.
    """

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)


_tape_stack = []
_recording = True
_check_finite = False


@contextlib.contextmanager
def tape(t=None):
    """Activate a tape for the duration of the block."""
    t = Tape() if t is None else t
    _tape_stack.append(t)
    try:
        yield t
    finally:
        _tape_stack.pop()


@contextlib.contextmanager
def no_record():
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


@contextlib.contextmanager
def recording(flag):
    global _recording
    prev = _recording
    _recording = flag
    try:
        yield
    finally:
        _recording = prev


def set_check_finite(flag):
    """Validate every op output for NaN/Inf (slow; meant for tests)."""
    global _check_finite
    _check_finite = bool(flag)


class Tensor:
    __slots__ = ("data", "requires_grad", "kind", "vjp", "inputs", "ctx", "tape", "index")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.kind = "leaf"
        self.vjp = None
        self.inputs = ()
        self.ctx = None
        self.tape = None
        self.index = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, kind={self.kind})"

    # arithmetic sugar; the implementations live in ops
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return slice_(self, idx)

    @property
    def T(self):
        return swap_last(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, kind, vjp, inputs, ctx=None):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.kind = kind
    out.ctx = ctx
    if _check_finite and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{kind}: produced non-finite values")
    if _recording and _tape_stack and any(i.requires_grad for i in inputs):
        t = _tape_stack[-1]
        out.requires_grad = True
        out.vjp = vjp
        out.inputs = inputs
        out.tape = t
        out.index = len(t.nodes)
        t.nodes.append(out)
    else:
        out.requires_grad = False
        out.vjp = None
        out.inputs = ()
        out.tape = None
        out.index = None
    return out


def _binary_shapes(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- primitives


def _vjp_add(g, out):
    a, b = out.inputs
    return (
        sum_to(g, a.shape) if a.requires_grad else None,
        sum_to(g, b.shape) if b.requires_grad else None,
    )


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _binary_shapes("add", a, b)
    return _make(a.data + b.data, "add", _vjp_add, (a, b))


def _vjp_sub(g, out):
    a, b = out.inputs
    return (
        sum_to(g, a.shape) if a.requires_grad else None,
        sum_to(neg(g), b.shape) if b.requires_grad else None,
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _binary_shapes("sub", a, b)
    return _make(a.data - b.data, "sub", _vjp_sub, (a, b))


def _vjp_mul(g, out):
    a, b = out.inputs
    ga = sum_to(mul(g, b), a.shape) if a.requires_grad else None
    gb = sum_to(mul(g, a), b.shape) if b.requires_grad else None
    return ga, gb


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _binary_shapes("multiply", a, b)
    return _make(a.data * b.data, "multiply", _vjp_mul, (a, b))


def _vjp_div(g, out):
    a, b = out.inputs
    ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
    gb = sum_to(neg(mul(g, div(out, b))), b.shape) if b.requires_grad else None
    return ga, gb


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _binary_shapes("divide", a, b)
    return _make(a.data / b.data, "divide", _vjp_div, (a, b))


def _vjp_neg(g, out):
    return (neg(g),)


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, "neg", _vjp_neg, (a,))


def _vjp_matmul(g, out):
    a, b = out.inputs
    ga = sum_to(matmul(g, swap_last(b)), a.shape) if a.requires_grad else None
    gb = sum_to(matmul(swap_last(a), g), b.shape) if b.requires_grad else None
    return ga, gb


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    return _make(data, "matmul", _vjp_matmul, (a, b))


def _vjp_transpose(g, out):
    return (transpose(g, tuple(np.argsort(out.ctx))),)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(ax) % max(a.ndim, 1) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    return _make(np.transpose(a.data, axes), "transpose", _vjp_transpose, (a,), axes)


def swap_last(a):
    a = as_tensor(a)
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


def _vjp_reshape(g, out):
    return (reshape(g, out.ctx),)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make(data, "reshape", _vjp_reshape, (a,), a.shape)


def _vjp_sum(g, out):
    (a,) = out.inputs
    axis, keepdims = out.ctx
    if axis is not None and not keepdims:
        shape = list(a.shape)
        for ax in axis:
            shape[ax] = 1
        g = reshape(g, tuple(shape))
    elif axis is None and not keepdims:
        g = reshape(g, (1,) * a.ndim)
    return (broadcast_to(g, a.shape),)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    data = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _make(np.asarray(data), "sum", _vjp_sum, (a,), (axis, keepdims))


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    count = a.size if ax is None else int(np.prod([a.shape[i] for i in ax]))
    return mul(sum(a, ax, keepdims), 1.0 / count)


def _vjp_broadcast(g, out):
    return (sum_to(g, out.inputs[0].shape),)


def broadcast_to(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {shape}") from None
    return _make(data, "broadcast", _vjp_broadcast, (a,))


def _vjp_sum_to(g, out):
    return (broadcast_to(g, out.inputs[0].shape),)


def sum_to(a, shape):
    """Reduce a broadcast result back to ``shape`` (inverse of broadcasting)."""
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and a.shape[i + lead] != 1
    )
    data = np.sum(a.data, axis=axes, keepdims=True)
    if lead:
        data = data.reshape(shape)
    return _make(data, "sum_to", _vjp_sum_to, (a,))


def _vjp_exp(g, out):
    return (mul(g, out),)


def exp(a):
    a = as_tensor(a)
    return _make(np.exp(a.data), "exp", _vjp_exp, (a,))


def _vjp_log(g, out):
    return (div(g, out.inputs[0]),)


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), "log", _vjp_log, (a,))


def _vjp_sqrt(g, out):
    return (div(g, mul(out, 2.0)),)


def sqrt(a):
    a = as_tensor(a)
    return _make(np.sqrt(a.data), "sqrt", _vjp_sqrt, (a,))


def _vjp_tanh(g, out):
    return (mul(g, sub(1.0, mul(out, out))),)


def tanh(a):
    a = as_tensor(a)
    return _make(np.tanh(a.data), "tanh", _vjp_tanh, (a,))


def _vjp_abs(g, out):
    # subgradient 0 at 0
    return (mul(g, Tensor(np.sign(out.inputs[0].data))),)


def abs(a):  # noqa: A001
    a = as_tensor(a)
    return _make(np.abs(a.data), "abs", _vjp_abs, (a,))


def _vjp_softmax(g, out):
    axis = out.ctx
    return (mul(out, sub(g, sum(mul(g, out), axis, keepdims=True))),)


def softmax(a, axis=-1):
    a = as_tensor(a)
    axis = axis % a.ndim
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return _make(e / e.sum(axis=axis, keepdims=True), "row-softmax", _vjp_softmax, (a,), axis)


def _vjp_xent(g, out):
    z, onehot = out.inputs
    gz = mul(reshape(g, g.shape + (1,)), sub(softmax(z, -1), onehot))
    return gz, None


def cross_entropy(logits, onehot):
    """Per-row softmax cross-entropy over the last axis; ``onehot`` is constant."""
    z, y = as_tensor(logits), as_tensor(onehot)
    if z.shape != y.shape:
        raise ShapeError(f"cross-entropy-with-logits: incompatible shapes {z.shape} and {y.shape}")
    m = z.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z.data - m).sum(axis=-1)) + m[..., 0]
    data = lse - (z.data * y.data).sum(axis=-1)
    return _make(data, "cross-entropy-with-logits", _vjp_xent, (z, y))


def _vjp_concat(g, out):
    axis, bounds = out.ctx
    grads = []
    for lo, hi in bounds:
        idx = [slice(None)] * g.ndim
        idx[axis] = slice(lo, hi)
        grads.append(slice_(g, tuple(idx)))
    return tuple(grads)


def concat(tensors, axis=0):
    tensors = tuple(as_tensor(t) for t in tensors)
    axis = axis % tensors[0].ndim
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    bounds, lo = [], 0
    for t in tensors:
        bounds.append((lo, lo + t.shape[axis]))
        lo += t.shape[axis]
    return _make(data, "concat", _vjp_concat, tensors, (axis, bounds))


def _vjp_slice(g, out):
    idx, shape = out.ctx
    return (scatter(g, idx, shape),)


def slice_(a, idx):
    """Basic (non-fancy) indexing."""
    a = as_tensor(a)
    if not isinstance(idx, tuple):
        idx = (idx,)
    try:
        data = a.data[idx]
    except IndexError as e:
        raise ShapeError(f"slice: {e} for shape {a.shape}") from None
    return _make(np.asarray(data), "slice", _vjp_slice, (a,), (idx, a.shape))


def _vjp_scatter(g, out):
    idx, _ = out.ctx
    return (slice_(g, idx),)


def scatter(a, idx, shape):
    """Place ``a`` into a zero tensor of ``shape`` at basic index ``idx``."""
    a = as_tensor(a)
    data = np.zeros(shape)
    data[idx] = a.data
    return _make(data, "scatter", _vjp_scatter, (a,), (idx, shape))


def _vjp_take(g, out):
    ids, n = out.ctx
    return (index_add(g, ids, n),)


def take_rows(table, ids):
    """Embedding lookup: rows of a 2-d ``table`` at integer ``ids``."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding-lookup: table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding-lookup: ids out of range for table {table.shape}")
    return _make(table.data[ids], "embedding-lookup", _vjp_take, (table,), (ids, table.shape[0]))


def _vjp_index_add(g, out):
    ids, _ = out.ctx
    return (take_rows(g, ids),)


def index_add(a, ids, n):
    """Scatter-add rows of ``a`` (shape ids.shape + (d,)) into an (n, d) zero table."""
    a = as_tensor(a)
    d = a.shape[-1]
    data = np.zeros((n, d))
    np.add.at(data, ids.reshape(-1), a.data.reshape(-1, d))
    return _make(data, "index_add", _vjp_index_add, (a,), (ids, n))


# ---------------------------------------------------------------- composites


def dot(a, b):
    """Full contraction <a, b> as a scalar."""
    return sum(mul(a, b))


def l2_norm(a, axis=None, keepdims=False):
    return sqrt(sum(mul(a, a), axis, keepdims))


def l1_norm(a, axis=None, keepdims=False):
    return sum(abs(a), axis, keepdims)


def layer_norm(x, gamma, beta, eps=1e-12):
    mu = mean(x, -1, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), -1, keepdims=True)
    return add(mul(div(xc, sqrt(add(var, eps))), gamma), beta)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x):
    # tanh approximation; composed so every derivative order stays on the tape
    inner = mul(add(x, mul(mul(mul(x, x), x), 0.044715)), _GELU_C)
    return mul(mul(x, 0.5), add(tanh(inner), 1.0))


def square(a):
    return mul(a, a)


# ---------------------------------------------------------------- tape API

_KINDS = {
    "add": add,
    "sub": sub,
    "multiply": mul,
    "divide": div,
    "matmul": matmul,
    "transpose": transpose,
    "row-softmax": softmax,
    "layer-normalize": layer_norm,
    "tanh": tanh,
    "gelu": gelu,
    "sum": sum,
    "mean": mean,
    "L1-norm": l1_norm,
    "L2-norm": l2_norm,
    "dot": dot,
    "concat": lambda *ts, axis=0: concat(ts, axis),
    "slice": slice_,
    "embedding-lookup": take_rows,
    "cross-entropy-with-logits": cross_entropy,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "reshape": reshape,
}


def record(kind, *inputs, **kwargs):
    """Apply the named op; the result is appended to the active tape."""
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; supported: {sorted(_KINDS)}") from None
    return fn(*inputs, **kwargs)


def backward(root, wrt, create_graph=False):
    """Gradients of scalar ``root`` with respect to each tensor in ``wrt``.

    Returns a list aligned with ``wrt``. A tensor that ``root`` does not
    depend on gets a zero gradient. With ``create_graph`` the backward pass
    is itself recorded, so the returned gradients can be differentiated.
    """
    if root.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    wrt = list(wrt)
    keep = {id(w) for w in wrt}
    grads = {}
    if root.requires_grad:
        grads[id(root)] = Tensor(np.ones_like(root.data))
        nodes = [] if root.tape is None else root.tape.nodes[: root.index + 1]
        with recording(create_graph):
            for node in reversed(nodes):
                nid = id(node)
                g = grads.get(nid) if nid in keep else grads.pop(nid, None)
                if g is None:
                    continue
                for inp, ig in zip(node.inputs, node.vjp(g, node)):
                    if ig is None or not inp.requires_grad:
                        continue
                    k = id(inp)
                    prev = grads.get(k)
                    grads[k] = ig if prev is None else add(prev, ig)
    out = []
    for w in wrt:
        g = grads.get(id(w))
        if g is None:
            g = Tensor(np.zeros_like(w.data))
        elif g.shape != w.shape:
            g = broadcast_to(g, w.shape)
        if not create_graph and g.requires_grad:
            g = Tensor(g.data)
        if not np.all(np.isfinite(g.data)):
            raise NonFiniteError("backward: non-finite gradient")
        out.append(g)
    return out
