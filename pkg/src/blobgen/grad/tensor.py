"""Dense float32 tensors with reverse-mode automatic differentiation.

Every primitive writes its backward rule in terms of other primitives, so
running a backward pass with recording enabled (``create_graph=True``) yields
gradients that are themselves differentiable. That is what powers the R1
gradient penalty, which needs d/dw of ||d D(x)/dx||^2.

Data is always float32, C-contiguous, row-major. Reductions accumulate in
float64 before casting back. Tensors are never mutated by operations; the
only sanctioned mutation is an optimizer writing fresh arrays into parameter
``.data`` slots between forward passes.
"""

from __future__ import annotations

import threading
from contextlib import nullcontext
from typing import Iterable, Sequence

import numpy as np

from ..errors import DomainError, ShapeError

__all__ = [
    "Tensor",
    "no_grad",
    "is_recording",
    "backward",
    "grad",
    "add", "sub", "mul", "div", "neg", "pow_", "square",
    "exp", "log", "sqrt", "sigmoid", "softplus", "tanh", "sin", "cos", "atan2",
    "leaky_relu", "l2_normalize", "minimum",
    "matmul", "conv2d", "upsample2x", "avg_pool2x2",
    "tsum", "tmean", "reshape", "transpose", "concat", "stack",
    "broadcast_to", "pad2d", "getitem",
]


class _Recording(threading.local):
    def __init__(self):
        self.enabled = True


_REC = _Recording()


def is_recording() -> bool:
    return _REC.enabled


class no_grad:
    """Context manager that suspends tape recording on this thread."""

    def __enter__(self):
        self._prev = _REC.enabled
        _REC.enabled = False
        return self

    def __exit__(self, *exc):
        _REC.enabled = self._prev
        return False


class TapeNode:
    """One recorded operation: input handles plus the backward rule.

    ``backward(grad_out)`` returns one cotangent (or None) per input.
    A backward pass visits nodes in reverse topological order exactly once.
    """

    __slots__ = ("inputs", "backward")

    def __init__(self, inputs, backward):
        self.inputs = inputs
        self.backward = backward


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        if type(data) is np.ndarray and data.dtype == np.float32:
            arr = data  # may be a strided view; ops below handle that
        else:
            arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: TapeNode | None = None

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def numpy(self) -> np.ndarray:
        """The underlying array. Treat as read-only."""
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flags = "+grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flags})\n{self.data!r}"

    # -- operator sugar ----------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def backward(self, create_graph: bool = False) -> None:
        backward(self, create_graph=create_graph)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _scalar_err(t):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t.node is not None


def _attach(out: Tensor, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    if _REC.enabled and any(_tracked(t) for t in inputs):
        out.node = TapeNode(inputs, bwd)
    return out


# --------------------------------------------------------------------------
# backward driver
# --------------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for inp in t.node.inputs:
            if inp.node is not None and id(inp) not in seen:
                stack.append((inp, False))
    return order


def _backprop(root: Tensor, seed: Tensor, create_graph: bool) -> dict[int, tuple[Tensor, Tensor]]:
    """Reverse sweep from ``root``; returns id -> (tensor, cotangent)."""
    order = _toposort(root)
    grads: dict[int, tuple[Tensor, Tensor]] = {id(root): (root, seed)}
    ctx = nullcontext() if create_graph else no_grad()
    with ctx:
        for t in reversed(order):
            entry = grads.get(id(t))
            if entry is None:
                continue
            g_out = entry[1]
            in_grads = t.node.backward(g_out)
            for inp, g in zip(t.node.inputs, in_grads):
                if g is None or not _tracked(inp):
                    continue
                prev = grads.get(id(inp))
                if prev is None:
                    grads[id(inp)] = (inp, g)
                else:
                    grads[id(inp)] = (inp, add(prev[1], g))
    return grads


def backward(loss: Tensor, create_graph: bool = False) -> None:
    """Accumulate ``dloss/dleaf`` into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise DomainError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None and not loss.requires_grad:
        return
    seed = Tensor(np.ones_like(loss.data))
    grads = _backprop(loss, seed, create_graph)
    for t, g in grads.values():
        if t.requires_grad and t.node is None:
            gd = g.data.reshape(t.data.shape)
            t.grad = gd.copy() if t.grad is None else t.grad + gd


def grad(output: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Functional gradients of a scalar ``output`` w.r.t. ``wrt`` tensors.

    Does not touch ``.grad``. With ``create_graph=True`` the returned tensors
    stay on the tape and can be differentiated again.
    """
    if output.size != 1:
        raise DomainError(f"grad needs a scalar output, got shape {output.shape}")
    seed = Tensor(np.ones_like(output.data))
    grads = _backprop(output, seed, create_graph) if (output.node or output.requires_grad) else {}
    out = []
    for w in wrt:
        entry = grads.get(id(w))
        out.append(entry[1] if entry is not None else Tensor(np.zeros_like(w.data)))
    return out


# --------------------------------------------------------------------------
# broadcasting helpers
# --------------------------------------------------------------------------

def _sum_to(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast cotangent back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    axes = list(range(extra))
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i + extra] != 1:
            axes.append(i + extra)
    out = tsum(g, axis=tuple(axes), keepdims=False) if axes else g
    return reshape(out, shape)


def broadcast_to(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(shape)
    data = np.asarray(np.broadcast_to(a.data, shape), order="C")
    out = Tensor(data)
    return _attach(out, (a,), lambda g: (_sum_to(g, a.shape),))


# --------------------------------------------------------------------------
# arithmetic
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data + b.data)
    return _attach(out, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data - b.data)
    return _attach(out, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(neg(g), b.shape)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data * b.data)
    return _attach(out, (a, b), lambda g: (_sum_to(mul(g, b), a.shape), _sum_to(mul(g, a), b.shape)))


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data / b.data)

    def bwd(g):
        ga = _sum_to(div(g, b), a.shape)
        gb = _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _attach(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = _lift(a)
    out = Tensor(-a.data)
    return _attach(out, (a,), lambda g: (neg(g),))


def pow_(a, p: float) -> Tensor:
    a = _lift(a)
    p = float(p)
    out = Tensor(a.data ** np.float32(p))
    return _attach(out, (a,), lambda g: (mul(g, mul(pow_(a, p - 1.0), p)),))


def square(a) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data * a.data)
    return _attach(out, (a,), lambda g: (mul(g, mul(a, 2.0)),))


def exp(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.exp(a.data))
    return _attach(out, (a,), lambda g: (mul(g, out),))


def log(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.log(a.data))
    return _attach(out, (a,), lambda g: (div(g, a),))


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.sqrt(a.data))
    return _attach(out, (a,), lambda g: (div(g, mul(out, 2.0)),))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    x = a.data
    z = np.exp(-np.abs(x))
    out = Tensor(np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)))
    return _attach(out, (a,), lambda g: (mul(g, mul(out, sub(1.0, out))),))


def softplus(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.logaddexp(np.float32(0.0), a.data))
    return _attach(out, (a,), lambda g: (mul(g, sigmoid(a)),))


def tanh(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.tanh(a.data))
    return _attach(out, (a,), lambda g: (mul(g, sub(1.0, mul(out, out))),))


def sin(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.sin(a.data))
    return _attach(out, (a,), lambda g: (mul(g, cos(a)),))


def cos(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.cos(a.data))
    return _attach(out, (a,), lambda g: (neg(mul(g, sin(a))),))


def atan2(y, x) -> Tensor:
    y, x = _lift(y), _lift(x)
    out = Tensor(np.arctan2(y.data, x.data))

    def bwd(g):
        denom = add(square(x), square(y))
        gy = _sum_to(mul(g, div(x, denom)), y.shape)
        gx = _sum_to(neg(mul(g, div(y, denom))), x.shape)
        return gy, gx

    return _attach(out, (y, x), bwd)


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties route the gradient to the first argument."""
    a, b = _lift(a), _lift(b)
    take_a = (a.data <= b.data).astype(np.float32)
    out = Tensor(np.minimum(a.data, b.data))
    mask = Tensor(take_a)

    def bwd(g):
        return (_sum_to(mul(g, mask), a.shape),
                _sum_to(mul(g, sub(1.0, mask)), b.shape))

    return _attach(out, (a, b), bwd)


def leaky_relu(a, slope: float = 0.2, gain: float = 1.0) -> Tensor:
    """max(x, slope*x), optionally fused with a constant output gain."""
    a = _lift(a)
    mask = np.where(a.data > 0, np.float32(gain), np.float32(slope * gain))
    out = Tensor(a.data * mask)
    mask_t = Tensor(mask)
    return _attach(out, (a,), lambda g: (mul(g, mask_t),))


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    a = _lift(a)
    n2 = tsum(square(a), axis=axis, keepdims=True)
    return div(a, sqrt(add(n2, eps)))


# --------------------------------------------------------------------------
# shape ops
# --------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))
    return _attach(out, (a,), lambda g: (reshape(g, a.shape),))


def _inv_perm(axes: tuple[int, ...]) -> tuple[int, ...]:
    inv = [0] * len(axes)
    for i, ax in enumerate(axes):
        inv[ax] = i
    return tuple(inv)


def transpose(a, axes: tuple[int, ...] | None = None) -> Tensor:
    a = _lift(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    out = Tensor(np.transpose(a.data, axes))  # view; consumers copy if needed
    inv = _inv_perm(axes)
    return _attach(out, (a,), lambda g: (transpose(g, inv),))


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise DomainError("concat needs at least one tensor")
    axis = axis % ts[0].ndim if ts[0].ndim else 0
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]

    def bwd(g):
        grads = []
        start = 0
        for t, n in zip(ts, sizes):
            key = tuple(slice(None) for _ in range(axis)) + (slice(start, start + n),)
            grads.append(getitem(g, key))
            start += n
        return tuple(grads)

    return _attach(out, tuple(ts), bwd)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)


def getitem(a, key) -> Tensor:
    a = _lift(a)
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, (int, slice, type(Ellipsis))):
            raise DomainError("only basic int/slice indexing is differentiable")
    out = Tensor(np.asarray(a.data[key], order="C"))
    return _attach(out, (a,), lambda g: (_scatter(g, key, a.shape),))


def _scatter(g, key, shape) -> Tensor:
    g = _lift(g)
    data = np.zeros(shape, dtype=np.float32)
    data[key] = g.data
    out = Tensor(data)
    return _attach(out, (g,), lambda gg: (getitem(gg, key),))


def pad2d(a, ph: int, pw: int) -> Tensor:
    """Zero-pad the last two axes by (ph, pw) on both sides."""
    a = _lift(a)
    if ph == 0 and pw == 0:
        return a
    width = [(0, 0)] * (a.ndim - 2) + [(ph, ph), (pw, pw)]
    out = Tensor(np.pad(a.data, width))
    key = tuple(slice(None) for _ in range(a.ndim - 2)) + (
        slice(ph, ph + a.shape[-2]), slice(pw, pw + a.shape[-1]))
    return _attach(out, (a,), lambda g: (getitem(g, key),))


# --------------------------------------------------------------------------
# reductions
# --------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(axis, a.ndim)
    # full reductions (losses, gradient checks) accumulate in float64; axis
    # reductions sum few terms, where float32 stays well inside test tolerances
    acc = np.float64 if axis is None else np.float32
    data = a.data.sum(axis=axes, keepdims=True, dtype=acc).astype(np.float32)
    kd_shape = data.shape
    if not keepdims:
        data = data.reshape(tuple(s for i, s in enumerate(kd_shape) if i not in axes))
    out = Tensor(data)

    def bwd(g):
        return (broadcast_to(reshape(g, kd_shape), a.shape),)

    return _attach(out, (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return mul(tsum(a, axis=axes, keepdims=keepdims), 1.0 / n)


# --------------------------------------------------------------------------
# matmul / convolution
# --------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """2-D matrix product, or batched 3-D with equal leading dims."""
    a, b = _lift(a), _lift(b)
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ShapeError(f"matmul needs two 2-D or two 3-D tensors, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    if a.ndim == 2:
        tp = None
    else:
        tp = (0, 2, 1)

    def bwd(g):
        ga = matmul(g, transpose(b, tp))
        gb = matmul(transpose(a, tp), g)
        return ga, gb

    return _attach(out, (a, b), bwd)


def _im2col_data(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    b, c, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    # [B, C, Ho, Wo, kh, kw] -> [C, kh, kw, B, Ho, Wo] -> [C*kh*kw, B*Ho*Wo]
    cols = np.transpose(win, (1, 4, 5, 0, 2, 3))
    return np.ascontiguousarray(cols).reshape(c * kh * kw, b * ho * wo)


def _col2im_data(cols: np.ndarray, x_shape, kh: int, kw: int) -> np.ndarray:
    b, c, h, w = x_shape
    ho, wo = h - kh + 1, w - kw + 1
    blocks = cols.reshape(c, kh, kw, b, ho, wo)
    # accumulate in [C, B, H, W] so block slices land without a per-slice
    # transpose; slices for one (di, dj) never overlap, so += is a scatter-add
    acc = np.zeros((c, b, h, w), dtype=np.float32)
    for di in range(kh):
        for dj in range(kw):
            acc[:, :, di:di + ho, dj:dj + wo] += blocks[:, di, dj]
    return np.ascontiguousarray(np.transpose(acc, (1, 0, 2, 3)))


def im2col(x, kh: int, kw: int) -> Tensor:
    """Stride-1 valid-padding patch extraction: [B,C,H,W] -> [C*kh*kw, B*Ho*Wo]."""
    x = _lift(x)
    if x.ndim != 4:
        raise ShapeError(f"im2col needs a 4-D tensor, got {x.shape}")
    out = Tensor(_im2col_data(x.data, kh, kw))
    return _attach(out, (x,), lambda g: (col2im(g, x.shape, kh, kw),))


def col2im(cols, x_shape, kh: int, kw: int) -> Tensor:
    """Adjoint of im2col: scatter-add patches back onto the image grid."""
    cols = _lift(cols)
    x_shape = tuple(x_shape)
    out = Tensor(_col2im_data(cols.data, x_shape, kh, kw))
    return _attach(out, (cols,), lambda g: (im2col(g, kh, kw),))


def conv2d(x, w, bias=None, padding: str = "same") -> Tensor:
    """2-D convolution (cross-correlation), stride 1, NCHW.

    ``w`` is [Cout, Cin, kh, kw]; ``padding`` is "same" (odd kernels) or "valid".
    """
    x, w = _lift(x), _lift(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d needs 4-D input and weight, got {x.shape}, {w.shape}")
    cout, cin, kh, kw = w.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[1]}, weight {cin}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise DomainError("same padding needs odd kernel sizes")
        xp = pad2d(x, (kh - 1) // 2, (kw - 1) // 2)
    elif padding == "valid":
        xp = x
    else:
        raise DomainError(f"unknown padding {padding!r}")
    b = x.shape[0]
    ho, wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d kernel larger than input")
    cols = im2col(xp, kh, kw)
    y = matmul(reshape(w, (cout, cin * kh * kw)), cols)
    y = transpose(reshape(y, (cout, b, ho, wo)), (1, 0, 2, 3))
    if bias is not None:
        y = add(y, reshape(_lift(bias), (1, cout, 1, 1)))
    return y


def upsample2x(a) -> Tensor:
    """Nearest-neighbour 2x upsample of the last two axes."""
    a = _lift(a)
    if a.ndim < 2:
        raise ShapeError("upsample2x needs at least 2 dims")
    data = np.repeat(np.repeat(a.data, 2, axis=-2), 2, axis=-1)
    out = Tensor(data)
    return _attach(out, (a,), lambda g: (mul(avg_pool2x2(g), 4.0),))


def avg_pool2x2(a) -> Tensor:
    """2x2 average pooling of the last two axes (extents must be even)."""
    a = _lift(a)
    h, w = a.shape[-2], a.shape[-1]
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2x2 needs even spatial extents, got {a.shape}")
    lead = a.shape[:-2]
    view = a.data.reshape(lead + (h // 2, 2, w // 2, 2))
    data = view.mean(axis=(-3, -1), dtype=np.float32)  # 4-term means: f32 is exact enough
    out = Tensor(data)
    return _attach(out, (a,), lambda g: (mul(upsample2x(g), 0.25),))
