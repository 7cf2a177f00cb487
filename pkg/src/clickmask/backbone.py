"""Image encoder: a plain ViT run once per image, exposing multi-level taps.

The encoder is the heavyweight half of the model. It patch-embeds the image,
adds a learned positional grid (bilinearly interpolated for sizes other than
the build-time grid), runs `depth` transformer blocks, and snapshots the
hidden state after each configured tap index — four feature maps from
shallow to deep, produced by a single forward pass.

Weights initialize randomly; importing pretrained weights is an extension
point, not a feature. Freezing flips every parameter's trainable flag, which
keeps the whole encoder out of both the autodiff graph and the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import PatchEmbed, TransformerBlock, merge_params, trunc_normal
from .numeric import Parameter, ops
from .numeric.tensor import Tensor


class FeatureTaps(NamedTuple):
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor


@dataclass
class BackboneConfig:
    d_model: int
    depth: int
    n_heads: int
    patch_size: int = 14
    tap_indices: tuple = ()
    base_grid: tuple = (32, 32)  # token grid the positional embedding is sized for
    frozen: bool = True

    def __post_init__(self):
        if not self.tap_indices:
            # blocks at quarter, half, three-quarter and full depth
            q = self.depth // 4
            self.tap_indices = (q, 2 * q, 3 * q, self.depth)
        self.tap_indices = tuple(int(t) for t in self.tap_indices)
        if len(self.tap_indices) != 4:
            raise ConfigError(f"need exactly 4 tap indices, got {self.tap_indices}")
        if list(self.tap_indices) != sorted(set(self.tap_indices)):
            raise ConfigError(f"tap indices must be strictly increasing: {self.tap_indices}")
        if self.tap_indices[0] < 1 or self.tap_indices[-1] > self.depth:
            raise ConfigError(
                f"tap indices {self.tap_indices} outside blocks 1..{self.depth}")
        if self.patch_size < 1:
            raise ConfigError("patch_size must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")

    @classmethod
    def toy(cls, **overrides) -> "BackboneConfig":
        kw = dict(d_model=64, depth=8, n_heads=4, patch_size=14, base_grid=(8, 8))
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def paper_shaped(cls, **overrides) -> "BackboneConfig":
        kw = dict(d_model=768, depth=12, n_heads=12, patch_size=14,
                  tap_indices=(3, 6, 9, 12), base_grid=(32, 32))
        kw.update(overrides)
        return cls(**kw)


class ImageEncoder:
    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.patch_embed = PatchEmbed(rng, c.patch_size, 3, c.d_model)
        self.pos_embed = Parameter(
            trunc_normal(rng, (c.base_grid[0], c.base_grid[1], c.d_model)))
        self.blocks = [TransformerBlock(rng, c.d_model, c.n_heads)
                       for _ in range(c.depth)]
        self.encode_calls = 0
        self.set_frozen(c.frozen)

    # ---------------------------------------------------------------- params

    def params(self) -> dict[str, Parameter]:
        out = merge_params({"patch_embed": self.patch_embed})
        out["pos_embed"] = self.pos_embed
        for i, blk in enumerate(self.blocks):
            for k, p in blk.params().items():
                out[f"block{i}.{k}"] = p
        return out

    def set_frozen(self, flag: bool) -> None:
        self.config.frozen = bool(flag)
        for p in self.params().values():
            p.trainable = not flag

    # --------------------------------------------------------------- forward

    def _check_divisible(self, h: int, w: int) -> None:
        p = self.config.patch_size
        if h % p:
            raise ShapeError(f"image height {h} is not a multiple of patch size {p}")
        if w % p:
            raise ShapeError(f"image width {w} is not a multiple of patch size {p}")

    def _positional(self, gh: int, gw: int) -> Tensor:
        if (gh, gw) == tuple(self.config.base_grid):
            return self.pos_embed
        return ops.bilinear_resize(self.pos_embed, (gh, gw))

    def encode(self, image: Tensor) -> FeatureTaps:
        """Run the full stack once, returning the four tap feature grids.

        image: (N, H, W, 3) Tensor of standardized reals.
        """
        if image.ndim != 4 or image.shape[-1] != 3:
            raise ShapeError(f"encode expects (N, H, W, 3), got {image.shape}")
        n, h, w, _ = image.shape
        self._check_divisible(h, w)
        self.encode_calls += 1

        tokens = self.patch_embed(image)           # (N, gh, gw, d)
        gh, gw = tokens.shape[1], tokens.shape[2]
        tokens = ops.add(tokens, self._positional(gh, gw))
        x = ops.reshape(tokens, (n, gh * gw, self.config.d_model))

        taps = []
        want = set(self.config.tap_indices)
        for i, blk in enumerate(self.blocks, start=1):
            x = blk(x)
            if i in want:
                taps.append(ops.reshape(x, (n, gh, gw, self.config.d_model)))
        return FeatureTaps(*taps)
