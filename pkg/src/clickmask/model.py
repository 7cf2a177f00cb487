"""Full segmenter: run-once encoder + per-click head, with ablation switches.

`encode` is the expensive call (the whole transformer stack); `predict` is
the cheap one (prompt head only) and never touches the encoder — sessions
cache taps once and then call predict per click. The two ablation flags
reproduce the stripped-down variant: `multi_level=False` feeds only the last
tap through the projection, `skip_connections=False` builds the pyramid from
the refined features alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import BackboneConfig, FeatureTaps, ImageEncoder
from .clicksim import Click
from .errors import ConfigError, ShapeError
from .head import HeadConfig, MaskHead, rasterize_clicks, stack_prompt_maps
from .numeric import Parameter, ops
from .numeric.tensor import Tensor, no_grad


@dataclass
class ModelConfig:
    backbone: BackboneConfig
    head: HeadConfig
    multi_level: bool = True
    skip_connections: bool = True
    # loaders hand the model [0,1] reals; these shift/scale to roughly [-2, 2]
    # and travel with the checkpoint so serving matches training
    norm_mean: tuple = (0.5, 0.5, 0.5)
    norm_std: tuple = (0.25, 0.25, 0.25)
    seed: int = 0

    def __post_init__(self):
        if self.backbone.d_model != self.head.d_model:
            raise ConfigError(
                f"backbone width {self.backbone.d_model} != head width "
                f"{self.head.d_model}")
        if self.backbone.patch_size != self.head.patch_size:
            raise ConfigError("backbone and head disagree on patch size")
        if len(self.norm_mean) != 3 or len(self.norm_std) != 3:
            raise ConfigError("norm_mean/norm_std must have 3 channels")
        if any(s <= 0 for s in self.norm_std):
            raise ConfigError("norm_std entries must be positive")

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        kw = dict(
            backbone=BackboneConfig.toy(),
            # radius 2: the toy data's thin structures are narrower than
            # the default disks, which would drown them at 112x112
            head=HeadConfig(d_model=64, n_heads=4, fusion_depth=4,
                            patch_size=14, click_radius=2,
                            pyramid_channels=32, decoder_channels=32),
        )
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def paper_shaped(cls, **overrides) -> "ModelConfig":
        kw = dict(
            backbone=BackboneConfig.paper_shaped(),
            head=HeadConfig(d_model=768, n_heads=12, fusion_depth=4,
                            patch_size=14, pyramid_channels=128,
                            decoder_channels=128),
        )
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "backbone": {
                "d_model": self.backbone.d_model,
                "depth": self.backbone.depth,
                "n_heads": self.backbone.n_heads,
                "patch_size": self.backbone.patch_size,
                "tap_indices": list(self.backbone.tap_indices),
                "base_grid": list(self.backbone.base_grid),
                "frozen": self.backbone.frozen,
            },
            "head": {
                "d_model": self.head.d_model,
                "n_heads": self.head.n_heads,
                "fusion_depth": self.head.fusion_depth,
                "patch_size": self.head.patch_size,
                "click_radius": self.head.click_radius,
                "binarize_threshold": self.head.binarize_threshold,
                "pyramid_channels": self.head.pyramid_channels,
                "decoder_channels": self.head.decoder_channels,
            },
            "multi_level": self.multi_level,
            "skip_connections": self.skip_connections,
            "norm_mean": list(self.norm_mean),
            "norm_std": list(self.norm_std),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        bb = dict(d["backbone"])
        bb["tap_indices"] = tuple(bb["tap_indices"])
        bb["base_grid"] = tuple(bb["base_grid"])
        return cls(
            backbone=BackboneConfig(**bb),
            head=HeadConfig(**d["head"]),
            multi_level=d["multi_level"],
            skip_connections=d["skip_connections"],
            norm_mean=tuple(d["norm_mean"]),
            norm_std=tuple(d["norm_std"]),
            seed=d["seed"],
        )


class ClickSegmenter:
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        # construction order fixes the rng stream: encoder first, head second
        self.encoder = ImageEncoder(config.backbone, rng)
        self.head = MaskHead(config.head, rng,
                             multi_level=config.multi_level,
                             skip_connections=config.skip_connections)
        self._mean = np.asarray(config.norm_mean, dtype=np.float32)
        self._std = np.asarray(config.norm_std, dtype=np.float32)

    # ----------------------------------------------------------------- state

    def params(self) -> dict[str, Parameter]:
        out = {f"backbone.{k}": p for k, p in self.encoder.params().items()}
        out.update({f"head.{k}": p for k, p in self.head.params().items()})
        return out

    def param_counts(self) -> tuple[int, int]:
        """(backbone weight count, head weight count)."""
        return (sum(p.data.size for p in self.encoder.params().values()),
                sum(p.data.size for p in self.head.params().values()))

    def set_frozen(self, flag: bool) -> None:
        self.encoder.set_frozen(flag)

    @property
    def encode_calls(self) -> int:
        return self.encoder.encode_calls

    # --------------------------------------------------------------- compute

    def standardize(self, images: np.ndarray) -> Tensor:
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[-1] != 3:
            raise ShapeError(f"expected (N, H, W, 3) images, got {images.shape}")
        return ops.constant((images - self._mean) / self._std, dtype=np.float32)

    def encode(self, images: np.ndarray) -> FeatureTaps:
        """Full encoder pass over [0,1] images; the expensive call."""
        return self.encoder.encode(self.standardize(images))

    def forward(self, taps: FeatureTaps, prompt_stack: np.ndarray,
                threshold: float | None = None):
        """Differentiable head pass; training entry point."""
        return self.head.forward(taps, prompt_stack, threshold)

    def predict(self, taps: FeatureTaps, clicks: list[Click],
                m_prev: np.ndarray, threshold: float | None = None) -> np.ndarray:
        """One interaction: rasterize clicks, run the head, binarize.

        taps must come from a prior `encode` of the same image (N == 1).
        Returns the (H, W) uint8 mask. The encoder is not invoked.
        """
        if taps.f1.shape[0] != 1:
            raise ShapeError("predict serves one image at a time (N == 1 taps)")
        p = self.config.backbone.patch_size
        h, w = taps.f1.shape[1] * p, taps.f1.shape[2] * p
        m_prev = np.asarray(m_prev)
        if m_prev.shape != (h, w):
            raise ShapeError(f"previous mask {m_prev.shape} != image {(h, w)}")
        pos, neg = rasterize_clicks(clicks, h, w, self.config.head.click_radius)
        stack = stack_prompt_maps((pos, neg, (m_prev != 0).astype(np.float32)))
        with no_grad():
            _, mask = self.head.forward(taps, stack[None], threshold)
        return mask[0]
