"""Segmentation losses on raw logits.

Both losses route every log/exp through softplus so extreme logits stay
finite; probabilities of the true class enter as sigmoid(z_t) with
z_t = z on positives and -z on negatives.
"""

from __future__ import annotations

import numpy as np

from ..errors import ClickmaskError, ShapeError
from . import ops
from .tensor import Tensor


def _signs_for(target: np.ndarray, shape, dtype) -> np.ndarray:
    target = np.asarray(target)
    if target.shape != tuple(shape):
        raise ShapeError(f"target shape {target.shape} != logits shape {tuple(shape)}")
    if not np.isin(target, (0, 1)).all():
        raise ClickmaskError("target mask must be binary {0,1}")
    return (2.0 * target - 1.0).astype(dtype)


def focal_loss(logits: Tensor, target: np.ndarray, gamma: float = 2.0) -> Tensor:
    """Mean over pixels of (1 - p_t)^gamma * -log(p_t).

    -log p_t = softplus(-z_t) and 1 - p_t = sigmoid(-z_t), so the whole
    pixel term is sigmoid(-z_t)^gamma * softplus(-z_t).
    """
    signs = _signs_for(target, logits.shape, logits.dtype)
    neg_zt = ops.mul(logits, ops.constant(-signs))
    modulator = ops.pow_const(ops.sigmoid(neg_zt), gamma)
    return ops.mean(ops.mul(modulator, ops.softplus(neg_zt)))


def binary_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean BCE via the independent identity softplus(z) - z*t."""
    target = np.asarray(target)
    _signs_for(target, logits.shape, logits.dtype)  # same validation
    zt = ops.mul(logits, ops.constant(target.astype(logits.dtype)))
    return ops.mean(ops.sub(ops.softplus(logits), zt))
