"""Differentiable kernels.

Every kernel takes/returns `Tensor`s, runs on numpy under the hood and wires
a hand-derived reverse-mode gradient. All of them are checked against central
finite differences (see `gradcheck`). Layout conventions:

  - token grids / images: channels last, optionally batched (..., H, W, C)
  - token sequences: (N, T, C)
  - conv weights: (kh, kw, c_in, c_out), no padding ("valid")
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

from ..errors import ShapeError
from .tensor import Tensor, result_tensor

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.accumulate_grad(g)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    return result_tensor(data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _acc(a, _unbroadcast(g * b.data, a.shape))
        _acc(b, _unbroadcast(g * a.data, b.shape))

    return result_tensor(data, (a, b), backward, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    data = a.data * s

    def backward(g):
        _acc(a, g * s)

    return result_tensor(data, (a,), backward, "scale")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def backward(g):
        _acc(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return result_tensor(data, (a, b), backward, "matmul")


def pow_const(a: Tensor, p: float) -> Tensor:
    """a ** p for positive a (used on probabilities)."""
    p = float(p)
    data = a.data ** p

    def backward(g):
        _acc(a, g * p * a.data ** (p - 1.0) if p != 0.0 else np.zeros_like(a.data))

    return result_tensor(data, (a,), backward, "pow_const")


# ------------------------------------------------------------------- shaping

def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _acc(a, g.reshape(a.shape))

    return result_tensor(data, (a,), backward, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))
    inv = np.argsort(axes)

    def backward(g):
        _acc(a, g.transpose(inv))

    return result_tensor(data, (a,), backward, "transpose")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _acc(t, piece)

    return result_tensor(data, tuple(tensors), backward, "concat")


def slice_(a: Tensor, index) -> Tensor:
    data = np.ascontiguousarray(a.data[index])

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] += g
            a.accumulate_grad(full)

    return result_tensor(data, (a,), backward, "slice")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.shape))

    return result_tensor(np.asarray(data), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ------------------------------------------------------------ nonlinearities

def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)

    def backward(g):
        _acc(a, g * y * (1.0 - y))

    return result_tensor(y, (a,), backward, "sigmoid")


def softplus(a: Tensor) -> Tensor:
    # log(1 + e^x), overflow-safe
    y = np.logaddexp(np.zeros(1, a.dtype), a.data)

    def backward(g):
        _acc(a, g * expit(a.data))

    return result_tensor(y, (a,), backward, "softplus")


def gelu(a: Tensor) -> Tensor:
    """Exact (erf) GELU: x * Phi(x)."""
    x = a.data
    phi_cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    y = x * phi_cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        _acc(a, g * (phi_cdf + x * pdf))

    return result_tensor(y, (a,), backward, "gelu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _acc(a, y * (g - inner))

    return result_tensor(y, (a,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis, scaled and shifted."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    y = xhat * gamma.data + beta.data

    def backward(g):
        gg = g * gamma.data
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        _acc(x, (gg - m1 - xhat * m2) * inv_std)
        _acc(gamma, _unbroadcast(g * xhat, gamma.shape))
        _acc(beta, _unbroadcast(g, beta.shape))

    return result_tensor(y, (x, gamma, beta), backward, "layer_norm")


# ------------------------------------------------------------------- affine

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b). The workhorse affine map; w is (in, out)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    y = matmul(x, w)
    return add(y, b) if b is not None else y


# -------------------------------------------------------------- convolution

def _conv_cols(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, Ho, Wo, kh, kw, C) view of all valid windows
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid 2-D convolution, channels last, weight (kh, kw, c_in, c_out)."""
    n, h, wd, c = x.shape
    kh, kw, cin, cout = w.shape
    if cin != c:
        raise ShapeError(f"conv2d: input channels {c} != weight channels {cin}")
    if h < kh or wd < kw:
        raise ShapeError(f"conv2d: input {h}x{wd} smaller than kernel {kh}x{kw}")
    cols = _conv_cols(x.data, kh, kw, stride)
    ho, wo = cols.shape[1], cols.shape[2]
    k = kh * kw * cin
    data = cols.reshape(n, ho, wo, k) @ w.data.reshape(k, cout)
    if b is not None:
        data = data + b.data

    def backward(g):
        if b is not None:
            _acc(b, g.sum(axis=(0, 1, 2)))
        if w.requires_grad:
            gw = cols.reshape(-1, k).T @ g.reshape(-1, cout)
            w.accumulate_grad(gw.reshape(w.shape))
        if x.requires_grad:
            gcols = (g @ w.data.reshape(k, cout).T).reshape(n, ho, wo, kh, kw, cin)
            gx = np.zeros_like(x.data)
            for di in range(kh):
                for dj in range(kw):
                    gx[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += gcols[:, :, :, di, dj]
            x.accumulate_grad(gx)

    parents = (x, w) if b is None else (x, w, b)
    return result_tensor(data, parents, backward, "conv2d")


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution: output (N, (H-1)s+kh, (W-1)s+kw, c_out)."""
    n, h, wd, c = x.shape
    kh, kw, cin, cout = w.shape
    if cin != c:
        raise ShapeError(f"conv2d_transpose: input channels {c} != weight channels {cin}")
    ho, wo = (h - 1) * stride + kh, (wd - 1) * stride + kw
    data = np.zeros((n, ho, wo, cout), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            data[:, di:di + stride * h:stride, dj:dj + stride * wd:stride] += x.data @ w.data[di, dj]
    if b is not None:
        data = data + b.data

    def backward(g):
        if b is not None:
            _acc(b, g.sum(axis=(0, 1, 2)))
        gx = np.zeros_like(x.data) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for di in range(kh):
            for dj in range(kw):
                gs = g[:, di:di + stride * h:stride, dj:dj + stride * wd:stride]
                if gx is not None:
                    gx += gs @ w.data[di, dj].T
                if gw is not None:
                    gw[di, dj] = np.tensordot(x.data, gs, axes=([0, 1, 2], [0, 1, 2]))
        if gx is not None:
            x.accumulate_grad(gx)
        if gw is not None:
            w.accumulate_grad(gw)

    parents = (x, w) if b is None else (x, w, b)
    return result_tensor(data, parents, backward, "conv2d_transpose")


# ------------------------------------------------------------------- resize

def resize_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) bilinear interpolation matrix, half-pixel centers,
    edges clamped. Same-size resize yields the exact identity."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    return m


def bilinear_resize(x: Tensor, out_hw) -> Tensor:
    """Separable bilinear resize of (..., H, W, C) grids to (out_h, out_w)."""
    if x.ndim < 3:
        raise ShapeError("bilinear_resize expects (..., H, W, C)")
    h, wd = x.shape[-3], x.shape[-2]
    oh, ow = int(out_hw[0]), int(out_hw[1])
    mh = resize_matrix(h, oh, x.dtype)
    mw = resize_matrix(wd, ow, x.dtype)
    data = np.einsum("oh,...hwc->...owc", mh, x.data)
    data = np.einsum("pw,...owc->...opc", mw, data)

    def backward(g):
        gx = np.einsum("pw,...opc->...owc", mw, g)
        gx = np.einsum("oh,...owc->...hwc", mh, gx)
        _acc(x, np.ascontiguousarray(gx))

    return result_tensor(np.ascontiguousarray(data), (x,), backward, "bilinear_resize")


# ---------------------------------------------------------------- attention

def attention(x: Tensor, w_qkv: Tensor, b_qkv: Tensor, w_out: Tensor,
              b_out: Tensor, n_heads: int) -> Tensor:
    """Multi-head self-attention over (N, T, C) sequences (composed kernel)."""
    n, t, c = x.shape
    if c % n_heads:
        raise ShapeError(f"attention: width {c} not divisible by {n_heads} heads")
    hd = c // n_heads
    qkv = linear(x, w_qkv, b_qkv)                       # (N, T, 3C)
    qkv = reshape(qkv, (n, t, 3, n_heads, hd))
    qkv = transpose(qkv, (2, 0, 3, 1, 4))               # (3, N, heads, T, hd)
    q = slice_(qkv, (0,))
    k = slice_(qkv, (1,))
    v = slice_(qkv, (2,))
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    att = softmax(scores, axis=-1)
    ctx = matmul(att, v)                                # (N, heads, T, hd)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (n, t, c))
    return linear(ctx, w_out, b_out)
