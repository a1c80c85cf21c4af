"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every differentiable op produces a :class:`Tensor` that remembers its parents
and a backward function mapping the output gradient to one gradient per
parent. :func:`backward` walks the recorded graph in reverse topological
order, visiting each node once.

Complex tensors are supported for the spectral ops. For a real-valued loss
``L`` and complex value ``z`` the stored gradient is ``dL/dRe(z) + 1j*dL/dIm(z)``,
i.e. the pair of real-plane gradients packed into one complex array. Under
that convention a linear map ``y = A x`` has gradient ``A^H g`` and an
elementwise product ``y = a * b`` has gradient ``conj(b) * g`` for ``a``.
Gradients flowing into real tensors keep only the real part.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

from .errors import BroadcastError, ContractError, ShapeError

_GRAD_ENABLED = True
_DEFAULT_DTYPE = np.float64

DTYPES = {
    "real32": np.float32,
    "real64": np.float64,
    "complex64": np.complex64,
    "complex128": np.complex128,
}


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(DTYPES.get(dtype, dtype)).type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """N-dimensional array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "no_decay")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(DTYPES.get(dtype, dtype), copy=False)
        elif not (np.issubdtype(arr.dtype, np.floating) or np.issubdtype(arr.dtype, np.complexfloating)):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name
        self.no_decay = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self):
        return self.data.item()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None):
        return backward(self, grad)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- operators --------------------------------------------------------
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is None and not np.iscomplexobj(arr):
        dtype = _DEFAULT_DTYPE
    return Tensor(arr, dtype=dtype)


def _const_like(x, ref: Tensor) -> Tensor:
    """Wrap a python/numpy scalar so it matches the dtype of ``ref``."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if np.iscomplexobj(arr):
        return Tensor(arr.astype(np.result_type(arr.dtype, ref.dtype)))
    return Tensor(arr.astype(ref.dtype if ref.data.dtype.kind in "fc" else _DEFAULT_DTYPE))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.no_decay = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise BroadcastError(f"shapes {a.shape} and {b.shape} do not broadcast") from exc


def _fit_grad(g: np.ndarray, p: Tensor) -> np.ndarray:
    """Coerce an upstream gradient to the shape/dtype class of parent ``p``."""
    g = _unbroadcast(g, p.shape)
    if np.iscomplexobj(g) and not p.is_complex:
        g = g.real
    if g.dtype != p.dtype and not (p.is_complex and not np.iscomplexobj(g)):
        g = g.astype(p.dtype, copy=False)
    return g


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every trainable leaf.

    Calling it twice without zeroing accumulates, as with a manual tape.
    """
    if grad is None:
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss.is_complex:
            raise ContractError("backward() needs a real-valued loss")
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    if not loss.requires_grad:
        raise ContractError("loss is not attached to any trainable tensor")

    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): grad}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            g = _fit_grad(g, node)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = _fit_grad(pg, p)
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _topological(root: Tensor) -> list:
    order, seen = [], set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _pair(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        a = as_tensor(a)
    if not isinstance(a, Tensor):
        a = _const_like(a, b)
    if not isinstance(b, Tensor):
        b = _const_like(b, a)
    _broadcast_shape(a, b)
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (g * np.conj(bd) if b.is_complex else g * bd,
                g * np.conj(ad) if a.is_complex else g * ad)

    return _make(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            ga = g / np.conj(bd)
            gb = -g * np.conj(out / bd)
        return ga, gb

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(p, Tensor):
        raise ContractError("power() supports constant exponents only")
    ad = a.data
    return _make(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def _real_only(a: Tensor, op: str) -> None:
    if a.is_complex:
        raise ContractError(f"{op} is not defined for complex tensors")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * np.conj(out),))


def log(a) -> Tensor:
    a = as_tensor(a)
    _real_only(a, "log")
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    _real_only(a, "sqrt")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    _real_only(a, "abs")
    ad = a.data
    return _make(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    _real_only(a, "relu")
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    _real_only(a, "sigmoid")
    out = special.expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1 - out),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    _real_only(a, "silu")
    ad = a.data
    s = special.expit(ad)
    return _make(ad * s, (a,), lambda g: (g * (s * (1 + ad * (1 - s))),))


_SQRT_HALF = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2 * np.pi)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    _real_only(a, "gelu")
    ad = a.data
    cdf = 0.5 * (1.0 + special.erf(ad * _SQRT_HALF))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * ad * ad)
    return _make((ad * cdf).astype(a.dtype), (a,), lambda g: (g * (cdf + ad * pdf),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    _real_only(a, "softplus")
    ad = a.data
    out = np.logaddexp(0, ad).astype(a.dtype)
    return _make(out, (a,), lambda g: (g * special.expit(ad),))


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "silu": silu,
    "relu": relu,
    "sigmoid": sigmoid,
    "gelu": gelu,
}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name; binary ops take ``b``, unary ops ignore it."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "sub", "mul", "div"):
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return fn(a, b)
    return fn(a)


# ---------------------------------------------------------------------------
# complex helpers
# ---------------------------------------------------------------------------

def real(z) -> Tensor:
    z = as_tensor(z)
    if not z.is_complex:
        return z
    return _make(np.ascontiguousarray(z.data.real), (z,), lambda g: (g.astype(z.dtype),))


def imag(z) -> Tensor:
    z = as_tensor(z)
    if not z.is_complex:
        raise ContractError("imag() of a real tensor")
    return _make(np.ascontiguousarray(z.data.imag), (z,), lambda g: (1j * g,))


def complex_(re, im) -> Tensor:
    re, im = _pair(re, im)
    cdtype = np.complex64 if re.dtype == np.float32 else np.complex128
    out = (re.data + 1j * im.data).astype(cdtype)
    return _make(out, (re, im), lambda g: (g.real, g.imag))


def conj(z) -> Tensor:
    z = as_tensor(z)
    return _make(np.conj(z.data), (z,), lambda g: (np.conj(g),))


def abs2(z) -> Tensor:
    """Squared modulus; real output."""
    z = as_tensor(z)
    zd = z.data
    out = (zd.real ** 2 + zd.imag ** 2) if z.is_complex else zd * zd
    return _make(out, (z,), lambda g: (2 * g * zd,))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _make(np.asarray(out), (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape),)

    return _make(np.asarray(out), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    out = a.data.reshape(shape).copy()
    return _make(out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i, j) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def flip(a, axis) -> Tensor:
    a = as_tensor(a)
    return _make(np.flip(a.data, axis), (a,), lambda g: (np.flip(g, axis),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=np.result_type(dtype, g.dtype))
        np.add.at(full, idx, g)
        return (full,)

    def bw_basic(g):
        full = np.zeros(shape, dtype=np.result_type(dtype, g.dtype))
        full[idx] = g
        return (full,)

    basic = _is_basic_index(idx)
    return _make(np.array(out, copy=True), (a,), bw_basic if basic else bw)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) or i is Ellipsis for i in items)


def take(a, indices, axis: int) -> Tensor:
    """Gather along ``axis``; indices may repeat (gradients are summed)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    out = np.take(a.data, indices, axis=axis)
    shape, dtype = a.shape, a.dtype

    flat_idx = indices.reshape(-1)
    # occurrence rank of each index: entries with equal rank are unique, so
    # the scatter runs as a few plain fancy-index additions
    order = np.argsort(flat_idx, kind="stable")
    sorted_idx = flat_idx[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_idx)) + 1]
    run_start = np.repeat(starts, np.diff(np.r_[starts, len(sorted_idx)]))
    rank = np.empty_like(flat_idx)
    rank[order] = np.arange(len(flat_idx)) - run_start
    groups = [np.flatnonzero(rank == r) for r in range(int(rank.max()) + 1)] if len(flat_idx) else []

    def bw(g):
        k = indices.ndim
        g_moved = np.moveaxis(g, tuple(range(axis, axis + k)), tuple(range(k)))
        g_moved = g_moved.reshape((-1,) + g_moved.shape[k:])
        full = np.zeros((shape[axis],) + shape[:axis] + shape[axis + 1:], dtype=np.result_type(dtype, g.dtype))
        for sel in groups:
            full[flat_idx[sel]] += g_moved[sel]
        return (np.moveaxis(full, 0, axis),)

    return _make(out, (a,), bw)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _make(out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def split(a, sections: int, axis: int = -1) -> list:
    a = as_tensor(a)
    axis = axis % a.ndim
    n = a.shape[axis]
    if n % sections:
        raise ShapeError(f"cannot split extent {n} into {sections} equal parts")
    step = n // sections
    out = []
    for i in range(sections):
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(i * step, (i + 1) * step)
        out.append(getitem(a, tuple(sl)))
    return out


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs tensors with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        bt = np.swapaxes(np.conj(bd) if b.is_complex else bd, -1, -2)
        at = np.swapaxes(np.conj(ad) if a.is_complex else ad, -1, -2)
        return g @ bt, at @ g

    return _make(ad @ bd, (a, b), bw)


def where(mask, a, b) -> Tensor:
    a, b = _pair(a, b)
    mask = np.asarray(mask, dtype=bool)
    return _make(np.where(mask, a.data, b.data), (a, b), lambda g: (g * mask, g * ~mask))


def cast(a, dtype) -> Tensor:
    a = as_tensor(a)
    dtype = np.dtype(DTYPES.get(dtype, dtype))
    if a.dtype == dtype:
        return a
    src = a.dtype
    return _make(a.data.astype(dtype), (a,), lambda g: (g.astype(src),))


def zeros(shape, dtype=None, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(shape, dtype=None, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad=requires_grad)


def parameter(data, name=None, no_decay=False, dtype=None) -> Tensor:
    t = Tensor(np.array(data, dtype=dtype or _DEFAULT_DTYPE), requires_grad=True, name=name)
    t.no_decay = no_decay
    return t


def custom_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Public hook for fused ops defined in other modules."""
    return _make(data, parents, backward_fn)
