"""Parameterized building blocks shared by the image encoder and click head.

Every layer exposes `params()` returning a flat {name: Parameter} dict;
composites merge their children under dotted prefixes, which is also the
checkpoint naming scheme. Weights draw from a truncated normal (std 0.02,
clipped at two sigmas), biases start at zero.
"""

from __future__ import annotations

import numpy as np

from .numeric import Parameter, ops
from .numeric.tensor import Tensor

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    draw = np.clip(rng.standard_normal(shape), -2.0, 2.0)
    return (draw * std).astype(np.float32)


def _zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float32)


class Dense:
    def __init__(self, rng, d_in: int, d_out: int):
        self.w = Parameter(trunc_normal(rng, (d_in, d_out)))
        self.b = Parameter(_zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w, self.b)

    def params(self):
        return {"w": self.w, "b": self.b}


class LayerNorm:
    def __init__(self, width: int):
        self.gamma = Parameter(np.ones(width, dtype=np.float32))
        self.beta = Parameter(_zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}


class MultiHeadAttention:
    def __init__(self, rng, width: int, n_heads: int):
        self.n_heads = n_heads
        self.w_qkv = Parameter(trunc_normal(rng, (width, 3 * width)))
        self.b_qkv = Parameter(_zeros(3 * width))
        self.w_out = Parameter(trunc_normal(rng, (width, width)))
        self.b_out = Parameter(_zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.attention(x, self.w_qkv, self.b_qkv, self.w_out, self.b_out,
                             self.n_heads)

    def params(self):
        return {"w_qkv": self.w_qkv, "b_qkv": self.b_qkv,
                "w_out": self.w_out, "b_out": self.b_out}


class TransformerBlock:
    """Pre-norm block: attention and a 4x GELU MLP, each residual."""

    def __init__(self, rng, width: int, n_heads: int):
        self.norm1 = LayerNorm(width)
        self.attn = MultiHeadAttention(rng, width, n_heads)
        self.norm2 = LayerNorm(width)
        self.mlp_in = Dense(rng, width, 4 * width)
        self.mlp_out = Dense(rng, 4 * width, width)

    def __call__(self, x: Tensor) -> Tensor:
        x = ops.add(x, self.attn(self.norm1(x)))
        return ops.add(x, self.mlp_out(ops.gelu(self.mlp_in(self.norm2(x)))))

    def params(self):
        out = {}
        for name, child in (("norm1", self.norm1), ("attn", self.attn),
                            ("norm2", self.norm2), ("mlp_in", self.mlp_in),
                            ("mlp_out", self.mlp_out)):
            for k, p in child.params().items():
                out[f"{name}.{k}"] = p
        return out


class PatchEmbed:
    """Non-overlapping PxP patches to tokens via one affine map.

    Implemented as a reshape into (rows, P, cols, P, C) blocks followed by a
    dense layer, which is exactly a stride-P convolution.
    """

    def __init__(self, rng, patch: int, in_channels: int, width: int):
        self.patch = patch
        self.in_channels = in_channels
        self.proj = Dense(rng, patch * patch * in_channels, width)

    def __call__(self, x: Tensor) -> Tensor:
        n, h, w, c = x.shape
        p = self.patch
        gh, gw = h // p, w // p
        x = ops.reshape(x, (n, gh, p, gw, p, c))
        x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
        x = ops.reshape(x, (n, gh, gw, p * p * c))
        return self.proj(x)

    def params(self):
        return {f"proj.{k}": p for k, p in self.proj.params().items()}


class Conv2d:
    def __init__(self, rng, kernel: int, c_in: int, c_out: int, stride: int = 1):
        self.stride = stride
        self.w = Parameter(trunc_normal(rng, (kernel, kernel, c_in, c_out)))
        self.b = Parameter(_zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride)

    def params(self):
        return {"w": self.w, "b": self.b}


class ConvTranspose2d:
    def __init__(self, rng, kernel: int, c_in: int, c_out: int, stride: int = 2):
        self.stride = stride
        self.w = Parameter(trunc_normal(rng, (kernel, kernel, c_in, c_out)))
        self.b = Parameter(_zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d_transpose(x, self.w, self.b, stride=self.stride)

    def params(self):
        return {"w": self.w, "b": self.b}


def merge_params(children: dict) -> dict:
    """Flatten {prefix: layer} into {prefix.name: Parameter}."""
    out = {}
    for prefix, layer in children.items():
        for k, p in layer.params().items():
            out[f"{prefix}.{k}"] = p
    return out
