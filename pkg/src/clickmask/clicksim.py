"""Deterministic user simulator: where would an annotator click next?

Given a predicted mask and the ground truth, the simulator builds the false
positive and false negative masks, runs an exact Euclidean distance transform
over each (image border counted as non-error), and places the next click at
the most interior pixel of the worse region — a negative click inside spurious
foreground, a positive click inside missed foreground. Also provides the
randomized click sampler used to seed training examples.

The distance transform prefers a compiled scan when the extension built; a
pure-numpy implementation with identical output is selected otherwise (or
when CLICKMASK_NO_EXT is set). `edt_backend()` reports which one is active.
"""

from __future__ import annotations

import os
from typing import NamedTuple

import numpy as np

from . import _edt_py
from .errors import NoErrorPixels, ShapeError

_SQUARED_EDT_IMPLS = {"pure": _edt_py.squared_edt}
if not os.environ.get("CLICKMASK_NO_EXT"):
    try:
        from . import _edtcore
        _SQUARED_EDT_IMPLS["compiled"] = _edtcore.squared_edt
    except ImportError:
        pass
_DEFAULT_BACKEND = "compiled" if "compiled" in _SQUARED_EDT_IMPLS else "pure"


def edt_backend() -> str:
    """Name of the distance-transform implementation selected at import."""
    return _DEFAULT_BACKEND


class Click(NamedTuple):
    i: int
    j: int
    positive: bool

    @property
    def label(self) -> str:
        return "+" if self.positive else "-"


class ErrorMasks(NamedTuple):
    false_positive: np.ndarray  # predicted foreground that should be background
    false_negative: np.ndarray  # missed foreground


def _as_binary(mask, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr
    if not np.isin(arr, (0, 1)).all():
        raise ShapeError(f"{name} must be binary")
    return arr.astype(bool)


def error_masks(pred, gt) -> ErrorMasks:
    pred = _as_binary(pred, "pred")
    gt = _as_binary(gt, "gt")
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    return ErrorMasks(pred & ~gt, gt & ~pred)


def edt(mask, backend: str | None = None) -> np.ndarray:
    """Distance from each set pixel to the nearest unset pixel, with the
    border padded as unset. Zero outside the mask, >= 1 strictly inside."""
    mask = _as_binary(mask, "mask")
    if not mask.any():
        return np.zeros(mask.shape, dtype=np.float64)
    impl = _SQUARED_EDT_IMPLS[backend or _DEFAULT_BACKEND]
    padded = np.pad(mask, 1).astype(np.uint8)
    sq = impl(padded)[1:-1, 1:-1]
    return np.sqrt(sq.astype(np.float64))


def next_click(pred, gt) -> Click:
    """Simulate the next corrective click.

    The click lands on the deepest pixel of whichever error region (spurious
    or missed foreground) has the larger interior distance. Deterministic:
    an exact tie between the two maxima goes to the missed-foreground region,
    and ties between equally deep pixels go to the smallest (row, column).
    """
    fp, fn = error_masks(pred, gt)
    if not fp.any() and not fn.any():
        raise NoErrorPixels("prediction matches ground truth; nothing to correct")
    d_fp = edt(fp)
    d_fn = edt(fn)
    if d_fn.max() >= d_fp.max():
        field, positive = d_fn, True
    else:
        field, positive = d_fp, False
    i, j = np.unravel_index(np.argmax(field), field.shape)
    return Click(int(i), int(j), positive)


def sample_training_clicks(gt, rng: np.random.Generator,
                           max_initial: int = 24,
                           strategy: str = "uniform") -> list[Click]:
    """Random clicks that seed a training example: one guaranteed positive
    drawn from the target's foreground, then up to max_initial-1 clicks
    uniform over the image, each labeled by ground-truth membership."""
    gt = _as_binary(gt, "gt")
    if strategy != "uniform":
        raise ValueError(f"unknown click strategy {strategy!r}")
    fg_i, fg_j = np.nonzero(gt)
    if fg_i.size == 0:
        raise NoErrorPixels("ground truth has no foreground to click")
    h, w = gt.shape
    k = int(rng.integers(1, max_initial + 1))
    pick = int(rng.integers(fg_i.size))
    clicks = [Click(int(fg_i[pick]), int(fg_j[pick]), True)]
    for _ in range(k - 1):
        i = int(rng.integers(h))
        j = int(rng.integers(w))
        clicks.append(Click(i, j, bool(gt[i, j])))
    return clicks
