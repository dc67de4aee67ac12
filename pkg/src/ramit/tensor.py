"""Minimal reverse-mode autodiff over numpy arrays.

Tensors are immutable values.  Operations executed while a :class:`Tape` is
active, and which touch at least one tensor with ``requires_grad=True``, are
recorded in execution order; :meth:`Tape.gradient` replays them backwards.

Storage is row-major numpy.  ``float32`` is the working precision; any op
preserves the dtype of its inputs, so casting parameters and inputs to
``float64`` gives the high-precision mode used by gradient checks.
"""

from __future__ import annotations

import itertools
import math
import os
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32
LEAKY_SLOPE = 0.01
_GELU_C = math.sqrt(2.0 / math.pi)
_DEBUG = bool(os.environ.get("RAMIT_DEBUG"))


class TensorError(Exception):
    """Base class for tensor engine errors."""


class ShapeMismatch(TensorError, ValueError):
    pass


class DivisionByZero(TensorError, ZeroDivisionError):
    pass


class InvalidAxis(TensorError, ValueError):
    pass


class GroupMismatch(TensorError, ValueError):
    pass


class ChannelNotDivisible(TensorError, ValueError):
    pass


class NotScalar(TensorError, ValueError):
    pass


class DetachedNode(TensorError, ValueError):
    pass


_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.grad = None

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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        """Backpropagate through the active tape, filling ``.grad`` on leaves."""
        tape = _active_tape()
        if tape is None:
            raise DetachedNode("backward() needs an active Tape")
        grads = tape.gradient(self)
        for t in tape.watched():
            t.grad = grads.get(t.node_id)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    if np.isscalar(x) and like is not None:
        return Tensor(np.asarray(x, dtype=dtype))
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def parameter(data, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class _Record:
    __slots__ = ("name", "inputs", "out_id", "backward")

    def __init__(self, name, inputs, out_id, backward):
        self.name = name
        self.inputs = inputs
        self.out_id = out_id
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    >>> with Tape() as tape:
    ...     y = (x * x).sum()
    >>> grads = tape.gradient(y, [x])
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.records: list[_Record] = []
        self._known: set[int] = set()
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    def _note_inputs(self, inputs: Sequence[Tensor]):
        for t in inputs:
            if t.requires_grad and t.node_id not in self._known:
                self._leaves[t.node_id] = t
                self._known.add(t.node_id)

    def record(self, name: str, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self._note_inputs(inputs)
        self.records.append(_Record(name, tuple(inputs), out.node_id, backward))
        self._known.add(out.node_id)

    def watched(self) -> list[Tensor]:
        return list(self._leaves.values())

    def gradient(self, loss: Tensor, wrt: Iterable[Tensor] | None = None):
        """Gradients of a scalar ``loss``.

        Returns a list aligned with ``wrt`` or, when ``wrt`` is None, a dict
        keyed by leaf ``node_id``.  Leaves the loss does not depend on get a
        zero gradient.
        """
        if loss.size != 1:
            raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
        if loss.node_id not in self._known:
            raise DetachedNode("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(rec.out_id, None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                prev = grads.get(t.node_id)
                grads[t.node_id] = gi if prev is None else prev + gi
        if wrt is None:
            return {k: grads.get(k, np.zeros_like(t.data)) for k, t in self._leaves.items()}
        return [grads.get(t.node_id, np.zeros_like(t.data)) for t in wrt]


def _active_tape() -> Tape | None:
    return Tape._stack[-1] if Tape._stack else None


@contextmanager
def no_grad():
    saved = Tape._stack
    Tape._stack = []
    try:
        yield
    finally:
        Tape._stack = saved


def _emit(name: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError(f"{name} produced non-finite values")
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(name, out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# Multiply-accumulate instrumentation
# ---------------------------------------------------------------------------


class MacCounter:
    """Tallies multiply-accumulates of matmul/conv kernels (and explicit adds)."""

    _stack: list["MacCounter"] = []

    def __init__(self):
        self.total = 0
        self.by_tag: dict[str, int] = {}
        self._tags: list[str] = []

    def __enter__(self):
        MacCounter._stack.append(self)
        return self

    def __exit__(self, *exc):
        MacCounter._stack.remove(self)
        return False

    def _add(self, n: int):
        self.total += n
        for t in set(self._tags):
            self.by_tag[t] = self.by_tag.get(t, 0) + n


def count_macs(n: int, tag: str | None = None):
    """Add ``n`` MACs to active counters; an explicit ``tag`` bypasses the tag stack."""
    for c in MacCounter._stack:
        if tag is None:
            c._add(int(n))
        else:
            c.total += int(n)
            c.by_tag[tag] = c.by_tag.get(tag, 0) + int(n)


@contextmanager
def mac_tag(name: str):
    """Attribute MACs counted inside the block to ``name`` on all active counters."""
    for c in MacCounter._stack:
        c._tags.append(name)
    try:
        yield
    finally:
        for c in MacCounter._stack:
            if name in c._tags:
                c._tags.remove(name)


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from None
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise DivisionByZero("divisor contains zeros")
    out = ad / bd
    return _emit("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    return _emit("scale", a.data * a.data.dtype.type(s), (a,), lambda g: (g * s,))


def _leaky_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.where(x > 0, g, g * LEAKY_SLOPE)


def leaky_relu(x: Tensor) -> Tensor:
    xd = x.data
    return _emit("leaky_relu", np.where(xd > 0, xd, xd * xd.dtype.type(LEAKY_SLOPE)), (x,),
                 lambda g: (_leaky_grad(xd, g),))


def _gelu_grad(x: np.ndarray, t: np.ndarray, g: np.ndarray) -> np.ndarray:
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    c = xd.dtype.type
    t = np.tanh(c(_GELU_C) * (xd + c(0.044715) * xd * xd * xd))
    out = c(0.5) * xd * (c(1.0) + t)
    return _emit("gelu", out, (x,), lambda g: (_gelu_grad(xd, t, g).astype(xd.dtype, copy=False),))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    out[~pos] = e / (1.0 + e)
    return _emit("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _emit("exp", out, (x,), lambda g: (g * out,))


def abs_(x: Tensor) -> Tensor:
    xd = x.data
    return _emit("abs", np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def clamp_min(x: Tensor, lo: float) -> Tensor:
    xd = x.data
    return _emit("clamp_min", np.maximum(xd, xd.dtype.type(lo)), (x,),
                 lambda g: (np.where(xd >= lo, g, 0).astype(g.dtype),))


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch by name; binary kinds take ``b``, ``scale`` takes a float."""
    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    unary = {"leaky_relu": leaky_relu, "gelu": gelu, "sigmoid": sigmoid}
    if kind in binary:
        return binary[kind](a, b)
    if kind in unary:
        return unary[kind](as_tensor(a))
    if kind == "scale":
        return scale(as_tensor(a), float(b))
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    s = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {s} to {shape}") from None
    return _emit("reshape", out, (x,), lambda g: (g.reshape(s),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _emit("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),))


def getitem(x: Tensor, idx) -> Tensor:
    s, dt = x.shape, x.dtype

    def bw(g):
        full = np.zeros(s, dtype=dt)
        np.add.at(full, idx, g) if _is_advanced(idx) else full.__setitem__(idx, g)
        return (full,)

    return _emit("getitem", np.array(x.data[idx]), (x,), bw)


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather ``table[index]`` along the first axis (bias lookups)."""
    index = np.asarray(index)
    n = table.shape[0]

    def bw(g):
        flat = g.reshape(index.size, *table.shape[1:])
        out = np.zeros_like(table.data)
        np.add.at(out, index.reshape(-1), flat)
        return (out,)

    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError("lookup index out of range")
    return _emit("take", table.data[index], (table,), bw)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None

    def bw(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return _emit("concat", out, tuple(xs), bw)


def roll(x: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    neg = tuple(-s for s in shifts)
    return _emit("roll", np.roll(x.data, shifts, axes), (x,), lambda g: (np.roll(g, neg, axes),))


def pad2d(x: Tensor, pad: int) -> Tensor:
    """Zero-pad the last two axes by ``pad`` on every side."""
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return _emit("pad2d", np.pad(x.data, widths), (x,), lambda g: (g[..., pad:-pad, pad:-pad],))


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def _check_axis(x: Tensor, axis):
    if axis is None:
        return
    for a in (axis if isinstance(axis, tuple) else (axis,)):
        if not -x.ndim <= a < x.ndim:
            raise InvalidAxis(f"axis {a} out of range for {x.ndim}-d tensor")


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    _check_axis(x, axis)
    s = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, s).copy(),)

    return _emit("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    _check_axis(x, axis)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum_(x, axis, keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# Matmul and fused normalizations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch(f"matmul batch dims {a.shape} @ {b.shape}") from None
    m, k = a.shape[-2:]
    n = b.shape[-1]
    count_macs(int(np.prod(batch, dtype=np.int64)) * m * k * n)
    ad, bd = a.data, b.data
    return _emit("matmul", ad @ bd, (a, b),
                 lambda g: (_unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape),
                            _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)))


def _softmax_grad(y: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    return y * (g - (g * y).sum(axis=axis, keepdims=True))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", y, (x,), lambda g: (_softmax_grad(y, g, axis),))


def _l2n_grad(y, n, clipped, g, axis, eps):
    inner = (g * y).sum(axis=axis, keepdims=True)
    return np.where(clipped, g / eps, (g - y * inner) / n)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``."""
    _check_axis(x, axis)
    xd = x.data
    raw = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    clipped = raw < eps
    n = np.maximum(raw, xd.dtype.type(eps))
    y = xd / n
    return _emit("l2_normalize", y, (x,), lambda g: (_l2n_grad(y, n, clipped, g, axis, eps),))


def _layer_norm_grad(xhat, inv, gamma_b, g, axis, red):
    gx = g * gamma_b
    c = xhat.shape[axis]
    dx = inv / c * (c * gx - gx.sum(axis=axis, keepdims=True)
                    - xhat * (gx * xhat).sum(axis=axis, keepdims=True))
    dgamma = (g * xhat).sum(axis=red)
    dbeta = g.sum(axis=red)
    return dx, dgamma, dbeta


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalize over ``axis`` (the channel axis) then apply a per-channel affine."""
    _check_axis(x, axis)
    axis = axis % x.ndim
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"layer_norm affine must be ({c},), got {gamma.shape}/{beta.shape}")
    bshape = [1] * x.ndim
    bshape[axis] = c
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gb = gamma.data.reshape(bshape)
    out = xhat * gb + beta.data.reshape(bshape)
    red = tuple(i for i in range(x.ndim) if i != axis)
    return _emit("layer_norm", out.astype(xd.dtype, copy=False), (x, gamma, beta),
                 lambda g: _layer_norm_grad(xhat, inv, gb, g, axis, red))


# ---------------------------------------------------------------------------
# Convolution and pixel shuffle
# ---------------------------------------------------------------------------


def _conv_forward(xp, w, groups, oh, ow):
    cin = xp.shape[0]
    cout, cin_g, kh, kw = w.shape
    out = np.zeros((cout, oh * ow), dtype=np.result_type(xp, w))
    if groups == cin and cin_g == 1 and cout == cin:
        # depthwise: one tap at a time
        out = out.reshape(cout, oh, ow)
        for dy in range(kh):
            for dx in range(kw):
                out += w[:, 0, dy, dx, None, None] * xp[:, dy:dy + oh, dx:dx + ow]
        return out
    wg = w.reshape(groups, cout // groups, cin_g, kh, kw)
    out = out.reshape(groups, cout // groups, oh * ow)
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, dy:dy + oh, dx:dx + ow].reshape(groups, cin_g, oh * ow)
            out += wg[:, :, :, dy, dx] @ patch
    return out.reshape(cout, oh, ow)


def _conv_backward(g, xp, w, groups, pad, oh, ow):
    cin = xp.shape[0]
    cout, cin_g, kh, kw = w.shape
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    if groups == cin and cin_g == 1 and cout == cin:
        for dy in range(kh):
            for dx in range(kw):
                win = xp[:, dy:dy + oh, dx:dx + ow]
                gw[:, 0, dy, dx] = (g * win).sum(axis=(1, 2))
                gxp[:, dy:dy + oh, dx:dx + ow] += w[:, 0, dy, dx, None, None] * g
    else:
        gg = g.reshape(groups, cout // groups, oh * ow)
        wg = w.reshape(groups, cout // groups, cin_g, kh, kw)
        gwg = gw.reshape(groups, cout // groups, cin_g, kh, kw)
        for dy in range(kh):
            for dx in range(kw):
                patch = xp[:, dy:dy + oh, dx:dx + ow].reshape(groups, cin_g, oh * ow)
                gwg[:, :, :, dy, dx] = gg @ patch.transpose(0, 2, 1)
                gp = np.swapaxes(wg[:, :, :, dy, dx], 1, 2) @ gg
                gxp[:, dy:dy + oh, dx:dx + ow] += gp.reshape(cin, oh, ow)
    gx = gxp[:, pad:gxp.shape[1] - pad, pad:gxp.shape[2] - pad] if pad else gxp
    return gx, gw


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, groups: int = 1, padding: int = 0) -> Tensor:
    """Stride-1 grouped cross-correlation of an unbatched ``(C_in, H, W)`` map."""
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects (C,H,W) input and 4-d weight, got {x.shape}, {w.shape}")
    cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    if cin % groups or cout % groups:
        raise GroupMismatch(f"channels {cin}->{cout} not divisible by groups={groups}")
    if cin // groups != cin_g:
        raise ShapeMismatch(f"weight expects {cin_g * groups} input channels, got {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({cout},)")
    oh, ow = h + 2 * padding - kh + 1, wd + 2 * padding - kw + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatch("kernel larger than padded input")
    count_macs(cout * cin_g * kh * kw * oh * ow)
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    wd_ = w.data
    out = _conv_forward(xp, wd_, groups, oh, ow)
    if bias is not None:
        out = out + bias.data[:, None, None]
    inputs = (x, w) if bias is None else (x, w, bias)

    def bw(g):
        gx, gw = _conv_backward(g, xp, wd_, groups, padding, oh, ow)
        return (gx, gw) if bias is None else (gx, gw, g.sum(axis=(1, 2)))

    return _emit("conv2d", out.astype(x.dtype, copy=False), inputs, bw)


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    crr, h, w = a.shape
    c = crr // (r * r)
    return a.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    c, hr, wr = a.shape
    h, w = hr // r, wr // r
    return a.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(c * r * r, h, w)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """``out[c, r*i+di, r*j+dj] = in[c*r*r + di*r + dj, i, j]``."""
    if x.ndim != 3 or x.shape[0] % (r * r):
        raise ChannelNotDivisible(f"{x.shape[0]} channels not divisible by r^2={r * r}")
    return _emit("pixel_shuffle", _shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    if x.ndim != 3 or x.shape[1] % r or x.shape[2] % r:
        raise ShapeMismatch(f"spatial dims {x.shape[1:]} not divisible by {r}")
    return _emit("pixel_unshuffle", _unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))
