"""Reverse-mode autodiff over numpy arrays.

Only the operations the residual U-Nets and the training losses need are
provided. Each op computes its forward result eagerly and, when gradient
recording is enabled and some input requires a gradient, attaches a closure
mapping the output gradient to one gradient per parent.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAKY_SLOPE = 0.01
NORM_EPS = 1e-5

_state = {"grad": True, "dtype": np.float32}


class ShapeError(ValueError):
    """Operand shapes are incompatible with the op."""


class DomainError(ValueError):
    """An input lies outside the op's mathematical domain."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Set the dtype new tensors are created with (float32 or float64)."""
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = prev


def grad_enabled() -> bool:
    return _state["grad"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.ascontiguousarray(data, dtype=dtype or _state["dtype"])
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

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

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def backward(self) -> None:
        backward(self)


Operand = Union[Tensor, float, int]


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    needs = _state["grad"] and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = tuple(parents) if needs else ()
    out._backward = backward_fn if needs else None
    return out


def _is_scalar(b) -> bool:
    return isinstance(b, (int, float, np.floating, np.integer))


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise -------------------------------------------------------------

def add(a: Tensor, b: Operand) -> Tensor:
    if _is_scalar(b):
        return _make(a.data + a.dtype.type(b), (a,), "add", lambda g: (g,))
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b: Operand) -> Tensor:
    if _is_scalar(b):
        return _make(a.data - a.dtype.type(b), (a,), "sub", lambda g: (g,))
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Operand) -> Tensor:
    if _is_scalar(b):
        return scale(a, b)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return _make(a.data * s, (a,), "scale", lambda g: (g * s,))


def div(a: Tensor, b: Operand) -> Tensor:
    if _is_scalar(b):
        return scale(a, 1.0 / b)
    _check_same(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b), "div", lambda g: (g / bd, -g * out / bd))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), "square", lambda g: (2 * g * ad,))


# -- activations -------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), "relu", lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    slope = a.dtype.type(slope)
    factor = np.where(a.data > 0, a.dtype.type(1), slope)
    return _make(a.data * factor, (a,), "leaky_relu", lambda g: (g * factor,))


def sigmoid(a: Tensor) -> Tensor:
    half = a.dtype.type(0.5)
    out = half * (np.tanh(half * a.data) + 1)
    return _make(out, (a,), "sigmoid", lambda g: (g * out * (1 - out),))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log: input must be strictly positive (clamp to >= 1e-7 first)")
    ad = a.data
    return _make(np.log(ad), (a,), "log", lambda g: (g / ad,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    out = np.clip(a.data, a.dtype.type(lo), a.dtype.type(hi))
    return _make(out, (a,), "clip", lambda g: (g * inside,))


def activation(a: Tensor, kind: str) -> Tensor:
    fns = {"relu": relu, "leaky_relu": leaky_relu, "sigmoid": sigmoid, "log": log}
    if kind not in fns:
        raise ValueError(f"unknown activation {kind!r}")
    return fns[kind](a)


# -- reductions --------------------------------------------------------------

def _norm_axes(axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(sorted(ax % ndim for ax in axes)) if ndim else tuple(axes)
    if not axes and ndim:
        raise ShapeError("reduce: empty axis set")
    return axes


def _reduce(a: Tensor, axes, keepdims: bool, mean: bool) -> Tensor:
    if a.size == 0:
        raise ShapeError("reduce: empty input")
    axes = _norm_axes(axes, a.data.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.sum(axis=axes, keepdims=keepdims)
    if mean:
        out = out / a.dtype.type(count)
    out = np.asarray(out, dtype=a.dtype)
    shape = a.shape

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        g = np.broadcast_to(g, shape)
        if mean:
            g = g / a.dtype.type(count)
        return (np.ascontiguousarray(g),)

    return _make(out, (a,), "mean" if mean else "sum", backward_fn)


def sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return _reduce(a, axes, keepdims, mean=False)


def mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    return _reduce(a, axes, keepdims, mean=True)


def reduce(a: Tensor, kind: str, axes=None) -> Tensor:
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {kind!r}")
    return _reduce(a, axes, False, mean=kind == "mean")


# -- spatial ops -------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW batch with an OIkk kernel."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.shape}, {w.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if k != k2:
        raise ShapeError("conv2d: kernel must be square")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({o},)")
    p = padding
    if h + 2 * p < k or wd + 2 * p < k:
        raise ShapeError(f"conv2d: input {h}x{wd} smaller than kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    # im2col in (c, ki, kj, n, ho, wo) order: one copy, reused by backward
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)
    wmat = w.data.reshape(o, c * k * k)
    out = (wmat @ cols).reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    if b is not None:
        out += b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        gw = (gmat @ cols.T).reshape(w.shape)
        gcols = (wmat.T @ gmat).reshape(c, k, k, n, ho, wo)
        gxp = np.zeros((c, n) + xp.shape[2:], dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
        gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        grads = (np.ascontiguousarray(gx.transpose(1, 0, 2, 3)), gw)
        if b is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return _make(out, parents, "conv2d", backward_fn)


def pool_avg2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pool_avg2: spatial dims must be even, got {h}x{w}")
    q = x.dtype.type(0.25)
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)) * q

    def backward_fn(g):
        return (np.repeat(np.repeat(g * q, 2, axis=2), 2, axis=3),)

    return _make(out, (x,), "pool_avg2", backward_fn)


def upsample_nearest2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward_fn(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(out, (x,), "upsample_nearest2", backward_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels: expected NCHW tensors")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _make(out, (a, b), "concat", lambda g: (g[:, :ca].copy(), g[:, ca:].copy()))


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_channels: bad range [{start}, {stop}) for {a.shape[1]} channels")
    shape = a.shape

    def backward_fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _make(a.data[:, start:stop].copy(), (a,), "slice", backward_fn)


def instance_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Per-sample, per-channel spatial normalization followed by an affine map."""
    n, c, h, w = x.shape
    if h * w < 2:
        raise ShapeError("instance_norm: needs at least 2 spatial elements")
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"instance_norm: affine params must have shape ({c},)")
    t = x.dtype.type
    count = t(h * w)
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1 / np.sqrt(var + t(eps))
    xhat = xc * inv
    gd = gain.data[None, :, None, None]
    out = xhat * gd + bias.data[None, :, None, None]

    def backward_fn(g):
        dxhat = g * gd
        s1 = dxhat.sum(axis=(2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
        dx = inv / count * (count * dxhat - s1 - xhat * s2)
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _make(out, (x, gain, bias), "instance_norm", backward_fn)


# -- graph traversal ---------------------------------------------------------

def topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root``, each after all of its inputs."""
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
