"""Differentiable operations on :class:`~lfmdt.autograd.Tensor`.

Broadcasting is limited to a Python scalar times a tensor and a per-channel
vector applied along the last axis. Everything else requires equal shapes.
Only ``matmul``, ``bmm``, ``linear`` and ``conv2d_same`` report
multiply-accumulates; elementwise work and softmax are not counted.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .autograd import Tensor, make_result, note_kinks, record_macs
from .errors import DimensionError, NumericError, UsageError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")
    if a.dtype != b.dtype:
        raise DimensionError(f"{op}: dtypes {a.dtype} and {b.dtype} differ")


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, dtype=dtype)


# -- products ---------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D operands."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    record_macs(m * k * n)
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return make_result(A @ B, (a, b), backward)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched product of ``(n, m, k)`` and ``(n, k, p)`` operands."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"bmm: cannot multiply {a.shape} by {b.shape}")
    n, m, k = a.shape
    record_macs(n * m * k * b.shape[2])
    A, B = a.data, b.data

    def backward(g):
        return g @ B.transpose(0, 2, 1), A.transpose(0, 2, 1) @ g

    return make_result(A @ B, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w (+ b)`` applied over the last axis of ``x``; ``w`` is ``(in, out)``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not fit weight {w.shape}")
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, w.shape[0])), w)
    y = reshape(y, lead + (w.shape[1],))
    return y if b is None else add_bias(y, b)


# -- shape ------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(src),)

    return make_result(out, (x,), backward)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return make_result(out, (x,), backward)


def transpose2d(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose2d: expected 2-D, got {x.shape}")
    return permute(x, (1, 0))


def take_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather along axis 0; repeated indices accumulate in the backward pass."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= x.shape[0]:
        raise IndexError(f"take_rows: indices {idx.tolist()} out of range for axis of {x.shape[0]}")
    src_shape, dtype = x.shape, x.dtype

    def backward(g):
        gx = np.zeros(src_shape, dtype=dtype)
        np.add.at(gx, idx, g)
        return (gx,)

    return make_result(x.data[idx], (x,), backward)


def concat_lastdim(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_lastdim: nothing to concatenate")
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead or p.dtype != parts[0].dtype:
            raise DimensionError(f"concat_lastdim: incompatible shapes {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[-1] for p in parts])

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return make_result(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), backward)


def slice_lastdim(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[-1]:
        raise DimensionError(f"slice_lastdim: [{start}, {stop}) outside last axis of {x.shape}")
    src_shape, dtype = x.shape, x.dtype

    def backward(g):
        gx = np.zeros(src_shape, dtype=dtype)
        gx[..., start:stop] = g
        return (gx,)

    return make_result(np.ascontiguousarray(x.data[..., start:stop]), (x,), backward)


def split_lastdim(x: Tensor, sections) -> list[Tensor]:
    """Split the last axis into ``sections`` equal parts, or parts of the listed sizes."""
    n = x.shape[-1]
    if isinstance(sections, int):
        if sections < 1 or n % sections:
            raise DimensionError(f"split_lastdim: {n} channels do not split into {sections} parts")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != n or min(sizes) < 1:
            raise DimensionError(f"split_lastdim: sizes {sizes} do not partition {n}")
    bounds = np.cumsum([0] + sizes)
    return [slice_lastdim(x, int(bounds[i]), int(bounds[i + 1])) for i in range(len(sizes))]


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return make_result(A * B, (a, b), lambda g: (g * B, g * A))


def scale(x: Tensor, s: float) -> Tensor:
    s = x.dtype.type(s)
    return make_result(x.data * s, (x,), lambda g: (g * s,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel vector along the last axis."""
    if b.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match channels of {x.shape}")
    axes = tuple(range(x.ndim - 1))
    return make_result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes)))


def scale_channels(x: Tensor, alpha: Tensor) -> Tensor:
    """Multiply channel ``c`` (last axis) at every position by ``alpha[c]``."""
    if alpha.ndim != 1 or alpha.shape[0] != x.shape[-1]:
        raise DimensionError(f"scale_channels: alpha {alpha.shape} does not match channels of {x.shape}")
    X, A = x.data, alpha.data
    axes = tuple(range(x.ndim - 1))
    return make_result(X * A, (x, alpha), lambda g: (g * A, (g * X).sum(axis=axes)))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    X = x.data
    note_kinks(X)
    slope = X.dtype.type(slope)
    pos = X > 0
    return make_result(np.where(pos, X, slope * X), (x,), lambda g: (np.where(pos, g, slope * g),))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    X = x.data
    cdf = 0.5 * (1.0 + erf(X / _SQRT2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * X * X)
        return ((g * (cdf + X * pdf)).astype(X.dtype, copy=False),)

    return make_result((X * cdf).astype(X.dtype, copy=False), (x,), backward)


def abs_(x: Tensor) -> Tensor:
    X = x.data
    note_kinks(X)
    return make_result(np.abs(X), (x,), lambda g: (g * np.sign(X),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    out = np.asarray(x.data.sum(), dtype=x.dtype).reshape((1,) * max(x.ndim, 1))
    return make_result(out, (x,), lambda g: (np.broadcast_to(g.reshape(()), shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis with per-row max subtraction."""
    X = x.data
    if not np.all(np.isfinite(X)):
        raise NumericError("softmax_rows: input contains NaN or Inf")
    e = np.exp(X - X.max(axis=-1, keepdims=True))
    Y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (Y * (g - (g * Y).sum(axis=-1, keepdims=True)),)

    return make_result(Y, (x,), backward)


def layer_norm_lastdim(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise UsageError("layer_norm_lastdim: eps must be positive")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm_lastdim: gamma/beta {gamma.shape}/{beta.shape} vs channels {c}")
    X = x.data
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + X.dtype.type(eps))
    xhat = xc * inv
    G = gamma.data
    axes = tuple(range(x.ndim - 1))

    def backward(g):
        gx_hat = g * G
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_result(xhat * G + beta.data, (x, gamma, beta), backward)


# -- image ops --------------------------------------------------------------

def _im2col_nhwc(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    """Padded ``(B, h+2, w+2, C)`` to columns ``(B*h*w, 9*C)``, channel fastest."""
    b, c = xp.shape[0], xp.shape[3]
    taps = [xp[:, dy:dy + h, dx:dx + w, :] for dy in range(3) for dx in range(3)]
    return np.concatenate(taps, axis=-1).reshape(b * h * w, 9 * c)


def conv2d_same_nhwc(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """3x3 cross-correlation, zero padding 1, on channels-last ``(B, H, W, C_in)`` input.

    The kernel keeps the ``(C_out, C_in, 3, 3)`` layout of :func:`conv2d_same`.
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d_same: need 4-D input and (O,I,3,3) kernel, got {x.shape}, {w.shape}")
    bsz, h, wd, cin = x.shape
    cout = w.shape[0]
    if w.shape[1] != cin:
        raise DimensionError(f"conv2d_same: kernel expects {w.shape[1]} input channels, input has {cin}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv2d_same: bias {b.shape} does not match {cout} output channels")
    record_macs(bsz * cout * cin * 9 * h * wd)
    cols = _im2col_nhwc(np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0))), h, wd)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(cout, 9 * cin)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(bsz, h, wd, cout)
    need_x = x.requires_grad

    def backward(g):
        gmat = g.reshape(bsz * h * wd, cout)
        gw = np.ascontiguousarray((gmat.T @ cols).reshape(cout, 3, 3, cin).transpose(0, 3, 1, 2))
        gb = g.sum(axis=(0, 1, 2)) if b is not None else None
        gx = None
        if need_x:
            gcols = (gmat @ wmat).reshape(bsz, h, wd, 9, cin)
            gxp = np.zeros((bsz, h + 2, wd + 2, cin), dtype=x.dtype)
            for k in range(9):
                dy, dx = divmod(k, 3)
                gxp[:, dy:dy + h, dx:dx + wd] += gcols[:, :, :, k]
            gx = np.ascontiguousarray(gxp[:, 1:-1, 1:-1])
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward)


def conv2d_same(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """3x3 cross-correlation with zero padding 1; ``x`` is ``(B, C_in, H, W)``."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d_same: need (B,C,H,W) input, got {x.shape}")
    y = conv2d_same_nhwc(permute(x, (0, 2, 3, 1)), w, b)
    return permute(y, (0, 3, 1, 2))


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    bsz, c, h, w = a.shape
    c_out = c // (r * r)
    return np.ascontiguousarray(
        a.reshape(bsz, c_out, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(bsz, c_out, h * r, w * r)
    )


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    bsz, c, H, W = a.shape
    h, w = H // r, W // r
    return np.ascontiguousarray(
        a.reshape(bsz, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(bsz, c * r * r, h, w)
    )


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """``(B, r*r*C, H, W) -> (B, C, r*H, r*W)``."""
    if x.ndim != 4 or r < 1 or x.shape[1] % (r * r):
        raise DimensionError(f"pixel_shuffle: {x.shape} channels not divisible by r^2={r * r}")
    return make_result(_shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_shuffle`."""
    if x.ndim != 4 or r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise DimensionError(f"pixel_unshuffle: spatial extents of {x.shape} not divisible by {r}")
    return make_result(_unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))
