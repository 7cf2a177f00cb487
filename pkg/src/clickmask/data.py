"""Dataset plumbing: manifest IO, PNG samples, synthetic shapes, crops.

A dataset on disk is a directory with `images/` (8-bit RGB PNG), `masks/`
(single-channel PNG, foreground=255), and a tab-separated `manifest.tsv`
whose comment header carries per-channel statistics:

    # channel_mean 0.4313 0.5120 0.3999
    # channel_std 0.2011 0.1899 0.2105
    images/ellipse-00000.png    masks/ellipse-00000.png    ellipse    ellipse-00000

The synthetic generator draws one shape (or a multi-part union) per sample
on a low-frequency textured background with a contrasting foreground color.
Each sample derives from its own child generator seeded by (seed, index),
so datasets are bit-identical across runs and machines. Images quantize to
8-bit at generation time, which makes save -> load an exact round trip.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .errors import ConfigError, SampleError, ShapeError


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    mask: np.ndarray   # (H, W) uint8 in {0, 1}
    class_label: str
    id: str


class ManifestEntry(NamedTuple):
    image_path: str
    mask_path: str
    class_label: str
    id: str


# ------------------------------------------------------------------ disk IO

def save_image(path, image: np.ndarray) -> None:
    arr = (np.asarray(image, dtype=np.float32) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def save_mask(path, mask: np.ndarray) -> None:
    arr = (np.asarray(mask, dtype=np.uint8) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def read_manifest(root) -> tuple[list[ManifestEntry], dict]:
    """Parse manifest.tsv under root; returns (entries, header stats)."""
    path = os.path.join(root, "manifest.tsv")
    if not os.path.exists(path):
        raise ConfigError(f"no manifest.tsv under {root}")
    entries, header = [], {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) >= 2:
                    header[parts[0]] = [float(v) for v in parts[1:]]
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ConfigError(
                    f"{path}:{line_no}: expected 4 tab-separated columns, got {len(cols)}")
            entries.append(ManifestEntry(*cols))
    return entries, header


def load_sample(root, entry: ManifestEntry) -> Sample:
    img_path = os.path.join(root, entry.image_path)
    mask_path = os.path.join(root, entry.mask_path)
    if not os.path.exists(img_path):
        raise SampleError(entry.id, f"missing image file {entry.image_path}")
    if not os.path.exists(mask_path):
        raise SampleError(entry.id, f"missing mask file {entry.mask_path}")
    image = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32) / 255.0
    gray = np.asarray(Image.open(mask_path).convert("L"))
    mask = (gray >= 128).astype(np.uint8)  # binarize at 50% gray
    if image.shape[:2] != mask.shape:
        raise SampleError(
            entry.id, f"image {image.shape[:2]} and mask {mask.shape} sizes differ")
    if not mask.any():
        raise SampleError(entry.id, "mask has no foreground")
    return Sample(image, mask, entry.class_label, entry.id)


def load_dataset(root) -> list[Sample]:
    entries, _ = read_manifest(root)
    return [load_sample(root, e) for e in entries]


def save_dataset(samples: list[Sample], out_dir) -> None:
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    stacked = np.stack([s.image for s in samples]) if samples else np.zeros((1, 1, 1, 3))
    mean = stacked.mean(axis=(0, 1, 2))
    std = stacked.std(axis=(0, 1, 2))
    lines = [
        "# channel_mean " + " ".join(f"{v:.6f}" for v in mean),
        "# channel_std " + " ".join(f"{v:.6f}" for v in std),
    ]
    for s in samples:
        img_rel = f"images/{s.id}.png"
        mask_rel = f"masks/{s.id}.png"
        save_image(os.path.join(out_dir, img_rel), s.image)
        save_mask(os.path.join(out_dir, mask_rel), s.mask)
        lines.append("\t".join([img_rel, mask_rel, s.class_label, s.id]))
    with open(os.path.join(out_dir, "manifest.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


# -------------------------------------------------------------- synthetics

SHAPE_KINDS = ("ellipse", "polygon", "bar", "multipart")


@dataclass
class SynthConfig:
    seed: int = 0
    count: int = 200
    canvas: tuple = (112, 112)
    weights: dict = field(default_factory=lambda: {
        "ellipse": 0.40, "polygon": 0.30, "bar": 0.15, "multipart": 0.15})
    patch_size: int = 14

    def __post_init__(self):
        unknown = set(self.weights) - set(SHAPE_KINDS)
        if unknown:
            raise ConfigError(f"unknown shape kinds {sorted(unknown)}")
        if any(v < 0 for v in self.weights.values()) or sum(self.weights.values()) <= 0:
            raise ConfigError("shape weights must be non-negative with positive sum")
        h, w = self.canvas
        if h % self.patch_size or w % self.patch_size:
            raise ConfigError(
                f"canvas {self.canvas} must be a multiple of patch size {self.patch_size}")
        if self.count < 0:
            raise ConfigError("count must be >= 0")


def _ellipse_mask(h, w, cy, cx, a, b, theta) -> np.ndarray:
    yy, xx = np.mgrid[:h, :w]
    u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
    v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.uint8)


def _bar_mask(h, w, cy, cx, length, width, theta) -> np.ndarray:
    yy, xx = np.mgrid[:h, :w]
    u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
    v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
    return ((np.abs(u) <= length / 2) & (np.abs(v) <= width / 2)).astype(np.uint8)


def _polygon_mask(h, w, points) -> np.ndarray:
    img = Image.new("L", (w, h), 0)
    ImageDraw.Draw(img).polygon([(float(x), float(y)) for y, x in points], fill=1)
    return np.asarray(img, dtype=np.uint8)


def _random_ellipse(rng, h, w, scale):
    cy = rng.uniform(0.3, 0.7) * h
    cx = rng.uniform(0.3, 0.7) * w
    a = rng.uniform(10, 28) * scale
    b = rng.uniform(8, 22) * scale
    theta = rng.uniform(0, np.pi)
    return _ellipse_mask(h, w, cy, cx, a, b, theta)


def _shape_mask(kind: str, rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    scale = min(h, w) / 112.0
    if kind == "ellipse":
        return _random_ellipse(rng, h, w, scale)
    if kind == "polygon":
        for _ in range(30):
            cy = rng.uniform(0.35, 0.65) * h
            cx = rng.uniform(0.35, 0.65) * w
            k = int(rng.integers(3, 9))
            # one vertex per angular slot keeps consecutive gaps bounded,
            # which avoids near-degenerate slivers that rasterize apart
            angles = (np.arange(k) + rng.uniform(0.15, 0.85, k)) * 2 * np.pi / k
            radii = rng.uniform(12, 30, k) * scale
            points = [(cy + r * np.sin(t), cx + r * np.cos(t))
                      for t, r in zip(angles, radii)]
            mask = _polygon_mask(h, w, points)
            if mask.any() and ndimage.label(mask)[1] == 1:
                return mask
        return _random_ellipse(rng, h, w, scale)
    if kind == "bar":
        cy = rng.uniform(0.3, 0.7) * h
        cx = rng.uniform(0.3, 0.7) * w
        length = rng.uniform(35, 80) * scale
        width = float(rng.integers(2, 7))  # 2..6 px: the fine-structure stress
        theta = rng.uniform(0, np.pi)
        return _bar_mask(h, w, cy, cx, length, width, theta)
    if kind == "multipart":
        parts = int(rng.integers(2, 4))
        for _ in range(60):  # retry until parts stay disjoint with margin
            blobs, circles = [], []
            for _ in range(parts):
                cy = rng.uniform(0.2, 0.8) * h
                cx = rng.uniform(0.2, 0.8) * w
                r = rng.uniform(6, 14) * scale
                circles.append((cy, cx, r))
            ok = all(np.hypot(c1[0] - c2[0], c1[1] - c2[1]) >= c1[2] + c2[2] + 5
                     for i, c1 in enumerate(circles) for c2 in circles[:i])
            if not ok:
                continue
            for cy, cx, r in circles:
                blobs.append(_ellipse_mask(h, w, cy, cx, r, r * rng.uniform(0.7, 1.0),
                                           rng.uniform(0, np.pi)))
            union = np.clip(np.sum(blobs, axis=0), 0, 1).astype(np.uint8)
            if all(b.any() for b in blobs):
                return union
        # fall back to a single blob if separation never worked out
        return _random_ellipse(rng, h, w, scale)
    raise ConfigError(f"unknown shape kind {kind!r}")


def _textured_background(rng, h, w) -> np.ndarray:
    base = rng.uniform(0.15, 0.85, size=3)
    yy, xx = np.mgrid[:h, :w]
    pattern = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        pattern += np.cos(2 * np.pi * (fy * yy / h + fx * xx / w) + phase)
    pattern = pattern / 3.0
    img = base[None, None, :] + 0.06 * pattern[..., None]
    img += rng.normal(0.0, 0.015, size=(h, w, 3))
    return img, base


def _contrasting_color(rng, base: np.ndarray) -> np.ndarray:
    for _ in range(100):
        c = rng.uniform(0.05, 0.95, size=3)
        if np.abs(c - base).max() >= 0.35:
            return c
    return 1.0 - base


def synth_sample(seed: int, index: int, canvas=(112, 112),
                 weights=None, kinds=SHAPE_KINDS) -> Sample:
    """Generate sample `index` of the dataset rooted at `seed` (pure)."""
    rng = np.random.default_rng([seed, index])
    h, w = canvas
    weights = weights or {k: 1.0 for k in kinds}
    names = [k for k in SHAPE_KINDS if weights.get(k, 0) > 0]
    probs = np.array([weights[k] for k in names], dtype=np.float64)
    kind = str(rng.choice(names, p=probs / probs.sum()))

    mask = _shape_mask(kind, rng, h, w)
    while not mask.any():  # vanishingly rare, but the invariant is hard
        mask = _shape_mask(kind, rng, h, w)

    img, base = _textured_background(rng, h, w)
    fg = _contrasting_color(rng, base)
    fg_pixels = fg[None, :] + rng.normal(0.0, 0.02, size=(int(mask.sum()), 3))
    img[mask.astype(bool)] = fg_pixels
    img = np.clip(img, 0.0, 1.0)
    quantized = (img * 255.0 + 0.5).astype(np.uint8).astype(np.float32) / 255.0
    return Sample(quantized, mask, kind, f"{kind}-{index:05d}")


def synth_generate(config: SynthConfig) -> list[Sample]:
    return [synth_sample(config.seed, i, config.canvas, config.weights)
            for i in range(config.count)]


# -------------------------------------------------------------------- crops

def random_crop(sample: Sample, size: int, rng: np.random.Generator,
                patch_size: int = 14) -> Sample:
    """Uniform crop among all windows containing at least one foreground
    pixel; images smaller than the crop are reflect-padded first."""
    if size % patch_size:
        raise ShapeError(f"crop size {size} is not a multiple of patch size {patch_size}")
    image, mask = sample.image, sample.mask
    h, w = mask.shape
    if h < size or w < size:
        pad_h, pad_w = max(0, size - h), max(0, size - w)
        image = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")
        mask = np.pad(mask, ((0, pad_h), (0, pad_w)), mode="reflect")
        h, w = mask.shape
    if not mask.any():
        raise SampleError(sample.id, "cannot crop: mask has no foreground")

    # windowed foreground counts via a padded integral image
    csum = np.zeros((h + 1, w + 1), dtype=np.int64)
    csum[1:, 1:] = mask.astype(np.int64).cumsum(0).cumsum(1)
    oh, ow = h - size + 1, w - size + 1
    counts = (csum[size:, size:] - csum[:oh, size:]
              - csum[size:, :ow] + csum[:oh, :ow])
    ys, xs = np.nonzero(counts > 0)
    pick = int(rng.integers(ys.size))
    y0, x0 = int(ys[pick]), int(xs[pick])
    return Sample(image[y0:y0 + size, x0:x0 + size],
                  mask[y0:y0 + size, x0:x0 + size],
                  sample.class_label, f"{sample.id}@{y0},{x0}")
