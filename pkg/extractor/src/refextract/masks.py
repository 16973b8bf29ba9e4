"""Candidate mask proposals from color regions.

Stand-in for a learned mask generator: posterize the frame, flood-fill
equal-color regions, keep the large ones.  Proposals are ordered by
area (ties by first pixel in raster order) so output is reproducible.
Tagged ``color-regions-v1`` in the manifest.
"""

from __future__ import annotations

from collections import deque

import numpy as np

MASK_GENERATOR_TAG = "color-regions-v1"

_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def quantize(rgb: np.ndarray, levels: int) -> np.ndarray:
    """Map each pixel to one of ``levels``^3 color keys."""
    q = np.minimum((rgb * levels).astype(np.int64), levels - 1)
    return (q[..., 0] * levels + q[..., 1]) * levels + q[..., 2]


def _regions(keys: np.ndarray):
    h, w = keys.shape
    seen = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            if seen[r, c]:
                continue
            key = keys[r, c]
            member = np.zeros((h, w), dtype=np.uint8)
            queue = deque([(r, c)])
            seen[r, c] = True
            while queue:
                cr, cc = queue.popleft()
                member[cr, cc] = 1
                for dr, dc in _NEIGHBORS:
                    nr, nc = cr + dr, cc + dc
                    if 0 <= nr < h and 0 <= nc < w and not seen[nr, nc] \
                            and keys[nr, nc] == key:
                        seen[nr, nc] = True
                        queue.append((nr, nc))
            yield member, r * w + c


def propose_masks(
    rgb: np.ndarray,
    max_masks: int = 8,
    levels: int = 4,
    min_area_frac: float = 0.01,
) -> np.ndarray:
    """Return (M, H, W) uint8 proposals, possibly with M = 0."""
    keys = quantize(rgb, levels)
    floor = min_area_frac * keys.size
    kept = [
        (int(m.sum()), first, m)
        for m, first in _regions(keys)
        if int(m.sum()) >= floor
    ]
    kept.sort(key=lambda item: (-item[0], item[1]))
    kept = kept[:max_masks]
    if not kept:
        return np.zeros((0,) + keys.shape, dtype=np.uint8)
    return np.stack([m for _, _, m in kept])
