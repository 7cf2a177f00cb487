"""Finite-difference verification of every kernel's reverse-mode gradient.

The check runs in double precision, projects the kernel output onto a fixed
random direction to get a scalar, and compares the analytic gradient of that
scalar against central differences, element by element. The reported number
is the worst absolute deviation relative to the gradient's own magnitude
(max over |g_ad|, |g_fd| and a tiny floor), so it is meaningful for linear
kernels (expected ~1e-9) and curved ones alike.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ClickmaskError
from . import losses, ops
from .tensor import Tensor, no_grad


@dataclass
class KernelCase:
    build: Callable  # (rng, spec) -> (fn, [Tensor inputs])
    defaults: dict
    tolerance: float


def _t(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def _build_linear(rng, spec):
    x, w, b = _t(rng, spec["x"]), _t(rng, (spec["x"][-1], spec["out"])), _t(rng, (spec["out"],))
    return lambda: ops.linear(x, w, b), [x, w, b]


def _build_add(rng, spec):
    a, b = _t(rng, spec["shape"]), _t(rng, spec["shape"])
    return lambda: ops.add(a, b), [a, b]


def _build_concat(rng, spec):
    parts = [_t(rng, s) for s in spec["shapes"]]
    return lambda: ops.concat(parts, axis=-1), parts


def _build_resize(rng, spec):
    x = _t(rng, spec["x"])
    return lambda: ops.bilinear_resize(x, spec["out_hw"]), [x]


def _build_conv2d(rng, spec):
    x = _t(rng, spec["x"])
    w = _t(rng, (*spec["kernel"], spec["x"][-1], spec["out"]))
    b = _t(rng, (spec["out"],))
    return lambda: ops.conv2d(x, w, b, stride=spec["stride"]), [x, w, b]


def _build_tconv2d(rng, spec):
    x = _t(rng, spec["x"])
    w = _t(rng, (*spec["kernel"], spec["x"][-1], spec["out"]))
    b = _t(rng, (spec["out"],))
    return lambda: ops.conv2d_transpose(x, w, b, stride=spec["stride"]), [x, w, b]


def _build_layer_norm(rng, spec):
    x = _t(rng, spec["x"])
    gamma = Tensor(1.0 + 0.1 * rng.standard_normal(spec["x"][-1]),
                   requires_grad=True, dtype=np.float64)
    beta = _t(rng, (spec["x"][-1],))
    return lambda: ops.layer_norm(x, gamma, beta), [x, gamma, beta]


def _build_attention(rng, spec):
    n, t, c = spec["x"]
    x = _t(rng, (n, t, c))
    w_qkv, b_qkv = _t(rng, (c, 3 * c)), _t(rng, (3 * c,))
    w_out, b_out = _t(rng, (c, c)), _t(rng, (c,))
    fn = lambda: ops.attention(x, w_qkv, b_qkv, w_out, b_out, spec["heads"])
    return fn, [x, w_qkv, b_qkv, w_out, b_out]


def _build_unary(op):
    def build(rng, spec):
        x = _t(rng, spec["shape"])
        return lambda: op(x), [x]

    return build


def _build_focal(rng, spec):
    x = _t(rng, spec["shape"])
    target = (rng.random(spec["shape"]) < 0.5).astype(np.float64)
    return lambda: losses.focal_loss(x, target, gamma=spec["gamma"]), [x]


KERNELS: dict[str, KernelCase] = {
    "linear": KernelCase(_build_linear, {"x": (8, 8), "out": 8}, 1e-6),
    "add": KernelCase(_build_add, {"shape": (8, 8)}, 1e-6),
    "concat": KernelCase(_build_concat, {"shapes": ((4, 5), (4, 3), (4, 2))}, 1e-6),
    "bilinear_resize": KernelCase(_build_resize, {"x": (1, 5, 6, 3), "out_hw": (8, 9)}, 1e-6),
    "conv2d": KernelCase(
        _build_conv2d, {"x": (1, 6, 6, 3), "kernel": (2, 2), "out": 4, "stride": 2}, 1e-4),
    "conv2d_transpose": KernelCase(
        _build_tconv2d, {"x": (1, 4, 4, 3), "kernel": (2, 2), "out": 4, "stride": 2}, 1e-4),
    "layer_norm": KernelCase(_build_layer_norm, {"x": (4, 7)}, 1e-4),
    "attention": KernelCase(_build_attention, {"x": (1, 4, 16), "heads": 4}, 1e-4),
    "gelu": KernelCase(_build_unary(ops.gelu), {"shape": (8, 8)}, 1e-4),
    "softmax": KernelCase(_build_unary(lambda x: ops.softmax(x, axis=-1)), {"shape": (4, 7)}, 1e-4),
    "sigmoid": KernelCase(_build_unary(ops.sigmoid), {"shape": (8, 8)}, 1e-4),
    "focal_loss": KernelCase(_build_focal, {"shape": (6, 6), "gamma": 2.0}, 1e-4),
}


def kernel_tolerance(kernel: str) -> float:
    return KERNELS[kernel].tolerance


def grad_check(kernel: str, input_spec: dict | None = None,
               eps: float = 1e-6, seed: int = 0) -> float:
    """Return the worst relative error between reverse-mode and central
    finite-difference gradients for the named kernel."""
    if kernel not in KERNELS:
        raise ClickmaskError(f"unknown kernel {kernel!r}; known: {sorted(KERNELS)}")
    case = KERNELS[kernel]
    spec = {**case.defaults, **(input_spec or {})}
    rng = np.random.default_rng(seed)
    fn, inputs = case.build(rng, spec)

    out = fn()
    if out.data.ndim == 0:
        direction = None
        scalar = out
    else:
        direction = ops.constant(rng.standard_normal(out.shape), dtype=np.float64)
        scalar = ops.sum_(ops.mul(out, direction))
    scalar.backward()
    analytic = [inp.grad.copy() for inp in inputs]
    for inp in inputs:
        inp.zero_grad()

    def eval_scalar() -> float:
        with no_grad():
            y = fn().data
        return float(y) if direction is None else float((y * direction.data).sum())

    worst = 0.0
    for inp, g_ad in zip(inputs, analytic):
        flat = inp.data.reshape(-1)
        g_fd = np.zeros_like(g_ad).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = eval_scalar()
            flat[i] = orig - eps
            minus = eval_scalar()
            flat[i] = orig
            g_fd[i] = (plus - minus) / (2.0 * eps)
        g_fd = g_fd.reshape(g_ad.shape)
        denom = max(np.abs(g_ad).max(initial=0.0), np.abs(g_fd).max(initial=0.0), 1e-8)
        worst = max(worst, float(np.abs(g_ad - g_fd).max() / denom))
    return worst
