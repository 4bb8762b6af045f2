"""Dense tensors with a small reverse-mode autodiff.

Each differentiable primitive records a node holding its parents and a
backward closure. Nodes carry a global sequence number, and :func:`backward`
replays the nodes reachable from the loss in exact reverse recording order.
Values needed by a backward closure are copied when the node is recorded, so
later mutation of an input array cannot corrupt the tape.

A thread-local MAC counter (:func:`count_macs`) instruments the two
projection primitives, :func:`matmul_channels` and :func:`linear_last`.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

WIDE = np.float64
NARROW = np.float32

_seq = itertools.count()
_local = threading.local()


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf from finite inputs."""


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


def _state():
    st = _local.__dict__
    if "grad_enabled" not in st:
        st["grad_enabled"] = True
        st["counter"] = None
        st["scope"] = ""
        st["dtype"] = NARROW
    return _local


def get_default_dtype():
    return _state().dtype


def set_default_dtype(dtype):
    dtype = np.dtype(dtype).type
    if dtype not in (WIDE, NARROW):
        raise ValueError(f"unsupported precision {dtype}")
    _state().dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the default dtype ("wide"/"narrow" or a numpy dtype)."""
    dtype = {"wide": WIDE, "narrow": NARROW}.get(dtype, dtype)
    old = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    st = _state()
    old = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = old


def is_grad_enabled():
    return _state().grad_enabled


# -- MAC instrumentation -----------------------------------------------------


@dataclass
class MacCounter:
    total: int = 0
    bias_adds: int = 0
    by_scope: dict = field(default_factory=dict)

    def add(self, macs, bias_adds=0):
        scope = _state().scope
        self.total += macs
        self.bias_adds += bias_adds
        self.by_scope[scope] = self.by_scope.get(scope, 0) + macs


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates of projection primitives inside the block."""
    st = _state()
    old = st.counter
    counter = MacCounter()
    st.counter = counter
    try:
        yield counter
    finally:
        st.counter = old


@contextlib.contextmanager
def mac_scope(label):
    st = _state()
    old = st.scope
    st.scope = label
    try:
        yield
    finally:
        st.scope = old


def _record_macs(macs, bias_adds=0):
    counter = _state().counter
    if counter is not None:
        counter.add(int(macs), int(bias_adds))


# -- tensor --------------------------------------------------------------------


class _Node:
    __slots__ = ("seq", "parents", "backward")

    def __init__(self, parents, backward):
        self.seq = next(_seq)
        self.parents = parents
        self.backward = backward


class Tensor:
    """An n-d array plus optional participation in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else get_default_dtype()
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by scalars")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def parameter(data, dtype=None):
    return Tensor(data, requires_grad=True, dtype=dtype)


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or get_default_dtype()))


def _check_finite(arr, opname):
    if arr.dtype.kind == "f" and not np.isfinite(arr).all():
        raise NonFiniteError(f"{opname} produced non-finite values")


def make_result(data, parents, backward_fn, opname="op"):
    """Wrap ``data`` as an op output; record a tape node if any parent needs grad.

    ``backward_fn(g)`` receives the output gradient array and returns one
    gradient array (or None) per parent.
    """
    _check_finite(data, opname)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._node = _Node(tuple(parents), backward_fn)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- backward --------------------------------------------------------------------


def backward(loss, inputs=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf needing grad.

    With ``inputs`` given, return the gradients of those tensors instead of
    touching ``.grad`` (zeros for inputs that do not influence the loss).
    """
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss is detached from the tape (no input requires grad)")

    nodes = {}
    stack = [loss]
    seen = set()
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._node is not None:
            nodes[id(t)] = t
            stack.extend(p for p in t._node.parents if p.requires_grad)

    grads = {id(loss): np.ones_like(loss.data)}
    wanted = None if inputs is None else {id(t): t for t in inputs}
    leaf_grads = {}
    for t in sorted(nodes.values(), key=lambda t: t._node.seq, reverse=True):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if wanted is not None and id(t) in wanted:
            leaf_grads[id(t)] = g
        for parent, pg in zip(t._node.parents, t._node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    # whatever remains belongs to leaves
    for key, g in grads.items():
        leaf_grads[key] = g

    if wanted is not None:
        return [leaf_grads.get(id(t), np.zeros_like(t.data)) for t in inputs]

    leaves = {}
    for t in nodes.values():
        for p in t._node.parents:
            if p.requires_grad and p._node is None:
                leaves[id(p)] = p
    if loss._node is None:
        leaves[id(loss)] = loss
    for key, leaf in leaves.items():
        g = leaf_grads.get(key)
        if g is None:
            continue
        g = g.astype(leaf.data.dtype, copy=False)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return None


# -- elementwise -------------------------------------------------------------------


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape
    return make_result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def neg(a):
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    ad, bd = a.data.copy(), b.data.copy()
    sa, sb = a.shape, b.shape

    def bw(g):
        return (
            _unbroadcast(g * bd, sa) if a.requires_grad else None,
            _unbroadcast(g * ad, sb) if b.requires_grad else None,
        )

    return make_result(ad * bd, (a, b), bw, "mul")


def square(a):
    return mul(a, a)


def sqrt(a):
    out = np.sqrt(a.data)
    saved = out.copy()
    return make_result(out, (a,), lambda g: (g * 0.5 / saved,), "sqrt")


def exp(a):
    out = np.exp(a.data)
    saved = out.copy()
    return make_result(out, (a,), lambda g: (g * saved,), "exp")


def log(a):
    x = a.data.copy()
    return make_result(np.log(x), (a,), lambda g: (g / x,), "log")


def reciprocal(a):
    x = a.data.copy()
    return make_result(1.0 / x, (a,), lambda g: (-g / (x * x),), "reciprocal")


# -- reductions ----------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def reduce_sum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    kshape = tuple(1 if i in axes else n for i, n in enumerate(shape))

    def bw(g):
        return (np.broadcast_to(g.reshape(kshape), shape).copy(),)

    return make_result(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw, "sum")


def reduce_mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes]))
    return reduce_sum(a, axes, keepdims) * (1.0 / n)


def reduce_var(a, axis=None, keepdims=False):
    """Population variance (divisor n) along ``axis``."""
    mu = reduce_mean(a, axis, keepdims=True)
    centered = a - mu
    return reduce_mean(centered * centered, axis, keepdims)


# -- shape algebra --------------------------------------------------------------------


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return make_result(out.copy(), (a,), lambda g: (g.reshape(old),), "reshape")


def permute(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return make_result(out, (a,), lambda g: (g.transpose(inv),), "permute")


def getitem(a, index):
    shape = a.shape
    dtype = a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(a.data[index]), (a,), bw, "getitem")


def slice_axis(a, axis, start, stop):
    axis %= a.ndim
    if not 0 <= start < stop <= a.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    index = tuple(slice(start, stop) if i == axis else slice(None) for i in range(a.ndim))
    shape = a.shape
    dtype = a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return make_result(a.data[index].copy(), (a,), bw, "slice")


def concat(tensors, axis=1):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty list")
    axis %= tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concat shapes {[t.shape for t in tensors]} on axis {axis}") from exc
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return make_result(out, tuple(tensors), bw, "concat")


def concat_channels(tensors):
    return concat(tensors, axis=1)


def chunk_channels(x, parts):
    """Split the channel axis into contiguous groups of ``ceil(C / parts)`` channels.

    The final group takes the remainder. Trailing groups that would be empty
    are not produced, so fewer than ``parts`` groups can come back when
    ``ceil(C / parts) * (parts - 1) >= C``.
    """
    C = x.shape[1]
    if not 1 <= parts <= C:
        raise ShapeError(f"cannot chunk {C} channels into {parts} parts")
    size = -(-C // parts)
    return [slice_axis(x, 1, c0, min(C, c0 + size)) for c0 in range(0, C, size)]


def roll(x, axis, offset):
    """Circular shift: ``out[..., i, ...] = x[..., (i - offset) mod n, ...]``."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for {x.ndim}-d tensor")
    offset = int(offset)
    return make_result(
        np.roll(x.data, offset, axis=axis), (x,), lambda g: (np.roll(g, -offset, axis=axis),), "roll"
    )


_NP_PAD = {"zero": "constant", "reflect": "reflect", "replicate": "edge", "circular": "wrap"}


def pad_spatial(x, amount, mode="zero", axes=(2, 3)):
    """Pad the spatial axes of ``x[b, C, h, w]`` by ``amount`` on both ends."""
    if amount < 0:
        raise ValueError("pad amount must be non-negative")
    if mode not in _NP_PAD:
        raise ValueError(f"unknown pad mode {mode!r}")
    if mode == "reflect":
        for ax in axes:
            if amount >= x.shape[ax]:
                raise ShapeError(
                    f"reflect padding of {amount} needs extent > {amount}, axis {ax} has {x.shape[ax]}"
                )
    if amount == 0:
        return make_result(x.data.copy(), (x,), lambda g: (g,), "pad")
    widths = [(amount, amount) if i in axes else (0, 0) for i in range(x.ndim)]
    out = np.pad(x.data, widths, mode=_NP_PAD[mode])
    shape = x.shape

    def bw(g):
        inner = tuple(slice(amount, amount + shape[i]) if i in axes else slice(None) for i in range(g.ndim))
        if mode == "zero":
            return (g[inner].copy(),)
        # fold gradient of the border copies back onto their sources
        dx = g
        for ax in axes:
            n = shape[ax]
            src = np.array(
                [_pad_source(e - amount, n, mode) for e in range(n + 2 * amount)], dtype=np.int64
            )
            moved = np.moveaxis(dx, ax, 0)
            acc = np.zeros((n,) + moved.shape[1:], dtype=dx.dtype)
            np.add.at(acc, src, moved)
            dx = np.moveaxis(acc, 0, ax)
        return (dx,)

    return make_result(out, (x,), bw, "pad")


def _pad_source(i, n, mode):
    if 0 <= i < n:
        return i
    if mode == "replicate":
        return 0 if i < 0 else n - 1
    if mode == "circular":
        return i % n
    return -i if i < 0 else 2 * (n - 1) - i


def crop_spatial(x, amount, axes=(2, 3)):
    """Remove ``amount`` cells from both ends of each spatial axis."""
    if amount == 0:
        return make_result(x.data.copy(), (x,), lambda g: (g,), "crop")
    index = tuple(slice(amount, -amount) if i in axes else slice(None) for i in range(x.ndim))
    for ax in axes:
        if x.shape[ax] <= 2 * amount:
            raise ShapeError(f"cannot crop {amount} from both ends of an axis of {x.shape[ax]}")
    shape = x.shape
    dtype = x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return make_result(x.data[index].copy(), (x,), bw, "crop")


# -- projections ------------------------------------------------------------------------


def matmul_channels(x, w, bias=None):
    """Apply ``w[C_out, C_in]`` at every spatial position of ``x[b, C_in, h, w]``."""
    if x.ndim != 4 or w.ndim != 2:
        raise ShapeError(f"matmul_channels expects 4-d input and 2-d weight, got {x.shape} and {w.shape}")
    B, Cin, H, W = x.shape
    Cout, wcin = w.shape
    if wcin != Cin:
        raise ShapeError(f"input has {Cin} channels but weight expects {wcin} (weight {w.shape})")
    if bias is not None and bias.shape != (Cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {Cout} output channels")
    xd = x.data.copy()
    wd = w.data.copy()
    out = np.einsum("oi,bihw->bohw", wd, xd, optimize=True)
    parents = (x, w)
    if bias is not None:
        out = out + bias.data.reshape(1, Cout, 1, 1)
        parents = (x, w, bias)
    _record_macs(B * H * W * Cout * Cin, B * H * W * Cout if bias is not None else 0)

    def bw(g):
        gx = np.einsum("oi,bohw->bihw", wd, g, optimize=True) if x.requires_grad else None
        gw = np.einsum("bohw,bihw->oi", g, xd, optimize=True) if w.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_result(out, parents, bw, "matmul_channels")


def linear_last(x, w):
    """Mix the last axis: ``out[..., i] = sum_j w[i, j] * x[..., j]``."""
    n_out, n_in = w.shape
    if x.shape[-1] != n_in:
        raise ShapeError(f"last axis has {x.shape[-1]} entries but weight expects {n_in}")
    xd = x.data.copy()
    wd = w.data.copy()
    lead = int(np.prod(x.shape[:-1]))
    _record_macs(lead * n_out * n_in)
    out = xd @ wd.T

    def bw(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.reshape(-1, n_out).T @ xd.reshape(-1, n_in) if w.requires_grad else None
        return gx, gw

    return make_result(out, (x, w), bw, "linear_last")
