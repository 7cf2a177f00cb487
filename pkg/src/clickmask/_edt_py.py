"""Pure-numpy exact squared Euclidean distance transform.

Fallback for when the compiled extension is unavailable. Same contract as
``_edtcore.squared_edt``: integer squared distances to the nearest zero
pixel, exact, caller guarantees at least one zero.

Two passes: a column scan finds the vertical distance to the nearest zero in
each column (two cumulative sweeps), then each row takes the minimum of
(dx² + vertical²) over all columns. The row pass is O(W²) per row but runs
as one vectorized reduction per row block, and all arithmetic stays in int64,
so the result is exact rather than a float approximation.
"""

from __future__ import annotations

import numpy as np

# rows processed per block in the O(W²) pass; bounds peak memory at
# roughly BLOCK * W * W * 8 bytes
_BLOCK_ROWS = 16


def squared_edt(inside: np.ndarray) -> np.ndarray:
    inside = np.ascontiguousarray(inside)
    h, w = inside.shape
    far = h + w  # exceeds any attainable distance; far**2 > h**2 + w**2

    vert = np.where(inside == 0, np.int64(0), np.int64(far))
    for y in range(1, h):
        np.minimum(vert[y], vert[y - 1] + 1, out=vert[y])
    for y in range(h - 2, -1, -1):
        np.minimum(vert[y], vert[y + 1] + 1, out=vert[y])

    cols = np.arange(w, dtype=np.int64)
    dx2 = (cols[:, None] - cols[None, :]) ** 2  # (x, x') squared offsets
    vert2 = vert * vert
    out = np.empty((h, w), dtype=np.int64)
    for y0 in range(0, h, _BLOCK_ROWS):
        y1 = min(y0 + _BLOCK_ROWS, h)
        # (rows, x, x') -> min over source column x'
        out[y0:y1] = (dx2[None, :, :] + vert2[y0:y1, None, :]).min(axis=2)
    return out
