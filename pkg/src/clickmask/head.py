"""The lightweight per-click network.

Everything that must re-run on each interaction lives here: click
rasterization into disk maps, the prompt patch embedding, fusion with the
cached image features, a short transformer refiner, per-level skip
concatenation, the four-scale feature pyramid, and the all-affine decoder
that produces mask logits at image resolution. The image encoder is never
touched — its taps arrive precomputed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .backbone import FeatureTaps
from .clicksim import Click
from .errors import ConfigError, OutOfBoundsClick, ShapeError
from .layers import (Conv2d, ConvTranspose2d, Dense, PatchEmbed,
                     TransformerBlock, merge_params)
from .numeric import Parameter, ops
from .numeric.tensor import Tensor


class PromptMaps(NamedTuple):
    """The three binary planes the head reads: positive-click disks,
    negative-click disks, and the previous (binarized) mask."""
    positive: np.ndarray
    negative: np.ndarray
    previous: np.ndarray


@dataclass
class HeadConfig:
    d_model: int
    n_heads: int
    fusion_depth: int = 4
    patch_size: int = 14
    click_radius: int = 5
    binarize_threshold: float = 0.5
    pyramid_channels: int = 128
    decoder_channels: int = 128

    def __post_init__(self):
        if self.fusion_depth < 1:
            raise ConfigError("fusion_depth must be >= 1")
        if self.click_radius < 0:
            raise ConfigError("click_radius must be >= 0")
        if not 0.0 <= self.binarize_threshold <= 1.0:
            raise ConfigError("binarize_threshold must lie in [0, 1]")


def rasterize_clicks(clicks: list[Click], h: int, w: int,
                     radius: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Union of closed disks (di² + dj² <= radius²) per click label, clipped
    at the borders. Returns (positive_plane, negative_plane) as float32 {0,1}."""
    planes = (np.zeros((h, w), dtype=np.float32),
              np.zeros((h, w), dtype=np.float32))
    span = np.arange(-radius, radius + 1)
    disk = (span[:, None] ** 2 + span[None, :] ** 2) <= radius * radius
    for idx, c in enumerate(clicks):
        if not (0 <= c.i < h and 0 <= c.j < w):
            raise OutOfBoundsClick(
                idx, f"click {idx} at ({c.i}, {c.j}) outside {h}x{w} image")
        i0, i1 = max(0, c.i - radius), min(h, c.i + radius + 1)
        j0, j1 = max(0, c.j - radius), min(w, c.j + radius + 1)
        window = disk[i0 - c.i + radius:i1 - c.i + radius,
                      j0 - c.j + radius:j1 - c.j + radius]
        plane = planes[0] if c.positive else planes[1]
        np.maximum(plane[i0:i1, j0:j1], window, out=plane[i0:i1, j0:j1])
    return planes


def stack_prompt_maps(maps: PromptMaps) -> np.ndarray:
    """(H, W) planes -> (H, W, 3) float32 channel stack, validated."""
    pos, neg, prev = (np.asarray(p, dtype=np.float32) for p in maps)
    if not (pos.shape == neg.shape == prev.shape) or pos.ndim != 2:
        raise ShapeError(
            f"prompt planes must share one HxW shape, got "
            f"{pos.shape}/{neg.shape}/{prev.shape}")
    return np.stack([pos, neg, prev], axis=-1)


class MaskHead:
    def __init__(self, config: HeadConfig, rng: np.random.Generator,
                 multi_level: bool = True, skip_connections: bool = True):
        self.config = config
        self.multi_level = multi_level
        self.skip_connections = skip_connections
        d = config.d_model
        self.prompt_embed = PatchEmbed(rng, config.patch_size, 3, d)
        self.project = Dense(rng, 4 * d if multi_level else d, d)
        self.refine_blocks = [TransformerBlock(rng, d, config.n_heads)
                              for _ in range(config.fusion_depth)]
        pin = 2 * d if skip_connections else d
        pc = config.pyramid_channels
        self.up4x_a = ConvTranspose2d(rng, 2, pin, pc, stride=2)
        self.up4x_b = ConvTranspose2d(rng, 2, pc, pc, stride=2)
        self.up2x = ConvTranspose2d(rng, 2, pin, pc, stride=2)
        self.keep1x = Conv2d(rng, 1, pin, pc, stride=1)
        self.down2x = Conv2d(rng, 2, pin, pc, stride=2)
        dc = config.decoder_channels
        self.level_proj = [Dense(rng, pc, dc) for _ in range(4)]
        self.fuse_proj = Dense(rng, 4 * dc, dc)
        self.out_proj = Dense(rng, dc, 1)

    def params(self) -> dict[str, Parameter]:
        children = {"prompt_embed": self.prompt_embed, "project": self.project,
                    "up4x_a": self.up4x_a, "up4x_b": self.up4x_b,
                    "up2x": self.up2x, "keep1x": self.keep1x,
                    "down2x": self.down2x, "fuse_proj": self.fuse_proj,
                    "out_proj": self.out_proj}
        children.update({f"refine{i}": b for i, b in enumerate(self.refine_blocks)})
        children.update({f"level_proj{i}": d for i, d in enumerate(self.level_proj)})
        return merge_params(children)

    # ------------------------------------------------------------ operations

    def embed_prompts(self, prompt_stack: np.ndarray) -> Tensor:
        """(N, H, W, 3) {0,1} planes -> (N, H/P, W/P, d) prompt tokens.

        Dedicated projection, no positional term — position information
        arrives through the image features this gets added to."""
        if prompt_stack.ndim != 4 or prompt_stack.shape[-1] != 3:
            raise ShapeError(
                f"prompt stack must be (N, H, W, 3), got {prompt_stack.shape}")
        n, h, w, _ = prompt_stack.shape
        p = self.config.patch_size
        if h % p:
            raise ShapeError(f"prompt height {h} is not a multiple of patch size {p}")
        if w % p:
            raise ShapeError(f"prompt width {w} is not a multiple of patch size {p}")
        return self.prompt_embed(ops.constant(prompt_stack, dtype=np.float32))

    def project_multilevel(self, taps: FeatureTaps) -> Tensor:
        shapes = {t.shape for t in taps}
        if len(shapes) != 1:
            raise ShapeError(f"tap shapes differ: {sorted(shapes)}")
        if self.multi_level:
            return self.project(ops.concat(list(taps), axis=-1))
        return self.project(taps.f4)

    def fuse(self, f_img: Tensor, f_prompt: Tensor) -> Tensor:
        if f_img.shape != f_prompt.shape:
            raise ShapeError(
                f"image features {f_img.shape} != prompt features {f_prompt.shape}")
        return ops.add(f_img, f_prompt)

    def refine(self, f_mix: Tensor) -> Tensor:
        n, gh, gw, d = f_mix.shape
        x = ops.reshape(f_mix, (n, gh * gw, d))
        for blk in self.refine_blocks:
            x = blk(x)
        return ops.reshape(x, (n, gh, gw, d))

    def skip_concat(self, refined: Tensor, taps: FeatureTaps) -> list[Tensor]:
        for t in taps:
            if t.shape != refined.shape:
                raise ShapeError(
                    f"skip tap shape {t.shape} != refined shape {refined.shape}")
        return [ops.concat([refined, t], axis=-1) for t in taps]

    def build_pyramid(self, hats: list[Tensor]) -> list[Tensor]:
        """Rescale the four token-grid tensors to 4x, 2x, 1x and half size,
        all at the shared pyramid channel width."""
        gh, gw = hats[0].shape[1], hats[0].shape[2]
        if gh % 2 or gw % 2:
            raise ShapeError(
                f"token grid {gh}x{gw} must be even to build the half-scale level")
        f1 = self.up4x_b(ops.gelu(self.up4x_a(hats[0])))
        f2 = self.up2x(hats[1])
        f3 = self.keep1x(hats[2])
        f4 = self.down2x(hats[3])
        return [f1, f2, f3, f4]

    def decode(self, pyramid: list[Tensor], out_h: int, out_w: int,
               threshold: float | None = None) -> tuple[Tensor, np.ndarray]:
        """All-affine decode: project each level to a shared width, resize
        everything to the finest grid, concat, fuse, predict one logit
        channel, and resize to (out_h, out_w).

        Returns (logits Tensor (N, H, W), binary mask uint8 (N, H, W))."""
        if threshold is None:
            threshold = self.config.binarize_threshold
        n = pyramid[0].shape[0]
        top_h, top_w = pyramid[0].shape[1], pyramid[0].shape[2]
        levels = []
        for proj, level in zip(self.level_proj, pyramid):
            x = proj(level)
            if (level.shape[1], level.shape[2]) != (top_h, top_w):
                x = ops.bilinear_resize(x, (top_h, top_w))
            levels.append(x)
        fused = ops.gelu(self.fuse_proj(ops.concat(levels, axis=-1)))
        logits = self.out_proj(fused)                       # (N, th, tw, 1)
        logits = ops.bilinear_resize(logits, (out_h, out_w))
        logits = ops.reshape(logits, (n, out_h, out_w))
        mask = (expit(logits.data) >= threshold).astype(np.uint8)
        return logits, mask

    # --------------------------------------------------------------- forward

    def forward(self, taps: FeatureTaps, prompt_stack: np.ndarray,
                threshold: float | None = None) -> tuple[Tensor, np.ndarray]:
        """Full head pipeline from cached taps + prompt planes to logits/mask."""
        h, w = prompt_stack.shape[1], prompt_stack.shape[2]
        f_img = self.project_multilevel(taps)
        f_prompt = self.embed_prompts(prompt_stack)
        if f_img.shape != f_prompt.shape:
            raise ShapeError(
                f"taps grid {f_img.shape} does not match prompt grid "
                f"{f_prompt.shape}; taps and prompts must describe one image")
        refined = self.refine(self.fuse(f_img, f_prompt))
        if self.skip_connections:
            hats = self.skip_concat(refined, taps)
        else:
            hats = [refined] * 4
        return self.decode(self.build_pyramid(hats), h, w, threshold)
