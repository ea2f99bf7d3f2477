"""Minimal dense tensors with tape-based reverse-mode differentiation.

Operations only record onto a :class:`Tape` while one is active::

    with Tape() as tape:
        y = matmul(a, b)
        loss = sum_all(y * y)
    backward(loss, tape)

Outside a tape every op is a plain numpy computation and its result carries
no gradient history.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, NumericalError, ConfigError

_DTYPES = (np.float32, np.float64)
_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _DTYPES:
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.is_leaf = True
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence]
    op: str


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss):
        backward(loss, self)


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{op}: non-finite value in output")


def _result(data, inputs, backward_fn, op):
    out = Tensor(data, dtype=data.dtype)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.nodes.append(Node(tuple(inputs), out, backward_fn, op))
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def backward(loss: Tensor, tape: Tape):
    """Reverse-accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad.

    Gradients accumulate across calls; use ``zero_grad`` between steps.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None or not tape.nodes:
        raise ValueError("backward called with an empty tape")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t.is_leaf:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
            else:
                key = id(t)
                grads[key] = gi if key not in grads else grads[key] + gi


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), bw, "mul")


def div(a, b):
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)
    _check_broadcast(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _result(out, (a, b), bw, "div")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _result(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def abs_(x: Tensor) -> Tensor:
    xd = x.data
    return _result(np.abs(xd), (x,), lambda g: (g * np.sign(xd),), "abs")


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    xd = x.data
    sig = _sigmoid(xd)
    out = xd * sig

    def bw(g):
        return (g * (sig + xd * sig * (1.0 - sig)),)

    return _result(out, (x,), bw, "swish")


def _sigmoid(v):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def soft_threshold(v: Tensor, theta) -> Tensor:
    """Shrinkage sign(v) * max(|v| - theta, 0).

    ``theta`` broadcasts against ``v`` (scalar or one threshold per trailing
    component). At ``|v| == theta`` the derivative is taken to be 0.
    """
    theta = _lift(theta, v)
    if np.any(theta.data < 0):
        raise DomainError("soft_threshold: negative threshold")
    _check_broadcast(v, theta, "soft_threshold")
    vd, td = v.data, theta.data
    mag = np.abs(vd) - td
    active = mag > 0
    out = np.where(active, np.sign(vd) * mag, 0.0).astype(vd.dtype, copy=False)
    # -0.0 would break bit-level comparisons against an explicit zero
    out[~active] = 0.0

    def bw(g):
        gv = np.where(active, g, 0.0)
        gt = np.where(active, -g * np.sign(vd), 0.0)
        return gv, _unbroadcast(gt, td.shape)

    return _result(out, (v, theta), bw, "soft_threshold")


def astype(x: Tensor, dtype) -> Tensor:
    src = x.dtype
    return _result(x.data.astype(dtype), (x,), lambda g: (g.astype(src),), "astype")


# --------------------------------------------------------------- reductions


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                   lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def sum_axis(x: Tensor, axis, keepdims=False) -> Tensor:
    shape = x.shape
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(x.data.sum(axis=axes, keepdims=keepdims), (x,), bw, "sum_axis")


def softmax(x: Tensor, axis=-1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), bw, "softmax")


# ----------------------------------------------------------------- shaping


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _result(out, (x,), lambda g: (g.transpose(inv),), "transpose")


def upsample_nearest2x(x: Tensor, channels_last: bool = False) -> Tensor:
    """Nearest-neighbour x2 upsampling of B x C x H x W (or B x H x W x C) tensors."""
    if x.ndim != 4:
        raise DimensionError(f"upsample expects 4-d input, got {x.shape}")
    ax = (1, 2) if channels_last else (2, 3)
    out = x.data.repeat(2, axis=ax[0]).repeat(2, axis=ax[1])
    shape = x.shape

    def bw(g):
        if channels_last:
            b, h, w, c = shape
            return (g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)),)
        b, c, h, w = shape
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _result(out, (x,), bw, "upsample")


# ------------------------------------------------------------------ linear


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(f"matmul: dtype mismatch {a.dtype} vs {b.dtype}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), bw, "matmul")


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul of B x m x k and B x k x p."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"bmm: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g

    return _result(ad @ bd, (a, b), bw, "bmm")


def _conv_input_grad(g, kernel, stride, pad, h, w):
    """Input gradient as a stride-1 correlation of the dilated, padded output
    gradient with the spatially flipped kernel (all channels-last)."""
    b, oh, ow, o = g.shape
    _, c, k, _ = kernel.shape
    if stride > 1:
        gd = np.zeros((b, (oh - 1) * stride + 1, (ow - 1) * stride + 1, o), dtype=g.dtype)
        gd[:, ::stride, ::stride] = g
    else:
        gd = g
    lo = k - 1 - pad
    rh = h - (gd.shape[1] + 2 * lo - k + 1)
    rw = w - (gd.shape[2] + 2 * lo - k + 1)
    gp = np.pad(gd, ((0, 0), (lo, lo + rh), (lo, lo + rw), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(gp, (k, k), axis=(1, 2))
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, k * k * o)
    kflip = kernel[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(k * k * o, c)
    return (cols @ kflip).reshape(b, h, w, c)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0, channels_last: bool = False) -> Tensor:
    """2-d cross-correlation with an O x C x k x k kernel.

    Input is B x C x H x W, or B x H x W x C with ``channels_last`` (output
    follows the same layout). Output size is floor((H + 2 pad - k) / stride) + 1.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-d input and kernel, got {x.shape}, {kernel.shape}")
    if channels_last:
        b, h, w, c = x.shape
        xd = x.data
    else:
        b, c, h, w = x.shape
        xd = x.data.transpose(0, 2, 3, 1)
    o, kc, k, k2 = kernel.shape
    if kc != c or k != k2:
        raise DimensionError(f"conv2d: kernel {kernel.shape} does not match input {x.shape}")
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    if k > h + 2 * pad or k > w + 2 * pad:
        raise DimensionError(f"conv2d: kernel {kernel.shape} larger than padded input {x.shape} (pad={pad})")
    if x.dtype != kernel.dtype:
        raise DimensionError(f"conv2d: dtype mismatch {x.dtype} vs {kernel.dtype}")
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    xp = np.pad(xd, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xd
    # im2col: rows are output pixels, columns ordered (ki, kj, c)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * oh * ow, k * k * c)
    kmat = kernel.data.transpose(2, 3, 1, 0).reshape(k * k * c, o)
    out = (cols @ kmat).reshape(b, oh, ow, o)
    if not channels_last:
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw(g):
        if not channels_last:
            g = g.transpose(0, 2, 3, 1)
        g2 = g.reshape(b * oh * ow, o)
        gk = (cols.T @ g2).reshape(k, k, c, o).transpose(3, 2, 0, 1)
        if pad <= k - 1:
            gx = _conv_input_grad(g, kernel.data, stride, pad, h, w)
        else:
            gcols = (g2 @ kmat.T).reshape(b, oh, ow, k, k, c)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[:, :, :, i, j]
            gx = gxp[:, pad : pad + h, pad : pad + w]
        if not channels_last:
            gx = gx.transpose(0, 3, 1, 2)
        return np.ascontiguousarray(gx), np.ascontiguousarray(gk)

    return _result(out, (x, kernel), bw, "conv2d")


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-6,
               channels_last: bool = False) -> Tensor:
    """Group normalisation over (C/groups, H, W) blocks with per-channel affine."""
    if x.ndim != 4:
        raise DimensionError(f"group_norm expects a 4-d input, got {x.shape}")
    if channels_last:
        b, h, w, c = x.shape
        xd = x.data
    else:
        b, c, h, w = x.shape
        xd = x.data.transpose(0, 2, 3, 1)
    if groups < 1 or c % groups:
        raise ConfigError(f"group_norm: {c} channels not divisible into {groups} groups")
    if eps <= 0:
        raise ConfigError("group_norm: eps must be positive")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"group_norm: affine shapes {gamma.shape}, {beta.shape} != ({c},)")
    cg = c // groups
    xg = xd.reshape(b, h * w, groups, cg)
    mu = xg.mean(axis=(1, 3), keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=(1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(b, h, w, c)
    out = xhat * gamma.data + beta.data
    if not channels_last:
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw(g):
        if not channels_last:
            g = g.transpose(0, 2, 3, 1)
        ggamma = (g * xhat).sum(axis=(0, 1, 2))
        gbeta = g.sum(axis=(0, 1, 2))
        dxhat = (g * gamma.data).reshape(b, h * w, groups, cg)
        xh = xhat.reshape(b, h * w, groups, cg)
        gx = inv * (dxhat - dxhat.mean(axis=(1, 3), keepdims=True)
                    - xh * (dxhat * xh).mean(axis=(1, 3), keepdims=True))
        gx = gx.reshape(b, h, w, c)
        if not channels_last:
            gx = gx.transpose(0, 3, 1, 2)
        return np.ascontiguousarray(gx), ggamma, gbeta

    return _result(out, (x, gamma, beta), bw, "group_norm")
