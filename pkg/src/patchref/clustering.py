"""Thresholding and connected-component clustering of similarity maps.

Patches whose normalized similarity strictly exceeds the threshold form
the foreground; 4- or 8-connected foreground regions become clusters.
Labels are assigned in breadth-first order starting from the first
foreground patch in row-major order, so label 1 is always the cluster
containing the top-left-most foreground patch.

If no patch passes the threshold, the threshold is lowered in steps of
0.05 until one does or the next step would go below zero.  The threshold
actually applied is recorded alongside the labels.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

OFFSETS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))
OFFSETS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 1), (1, 0))


@dataclass
class ClusterMap:
    """Cluster labels for one similarity map.

    ``labels`` is 0 for background, 1..k for clusters.  ``delta_used``
    is the threshold that actually produced the foreground, which is
    lower than the requested one when the adaptive fallback kicked in.
    """

    labels: np.ndarray  # (p, p) uint32
    k: int
    delta_used: float


def threshold_map(normalized: np.ndarray, delta: float) -> np.ndarray:
    """Boolean foreground: strictly greater than the threshold."""
    return np.asarray(normalized) > delta


def connected_components(binary: np.ndarray, connectivity: int = 4) -> tuple[np.ndarray, int]:
    """Label connected foreground regions with BFS.

    Returns (labels, count) where labels is uint32 with background 0 and
    clusters numbered from 1 in row-major discovery order.
    """
    if connectivity == 4:
        offsets = OFFSETS_4
    elif connectivity == 8:
        offsets = OFFSETS_8
    else:
        raise ValidationError(f"connectivity must be 4 or 8, got {connectivity}")
    binary = np.asarray(binary, dtype=bool)
    if binary.ndim != 2:
        raise ValidationError(f"expected a 2-d map, got shape {binary.shape}")
    rows, cols = binary.shape
    labels = np.zeros((rows, cols), dtype=np.uint32)
    current = 0
    for r in range(rows):
        for c in range(cols):
            if not binary[r, c] or labels[r, c]:
                continue
            current += 1
            labels[r, c] = current
            queue = deque([(r, c)])
            while queue:
                qr, qc = queue.popleft()
                for dr, dc in offsets:
                    nr, nc = qr + dr, qc + dc
                    if 0 <= nr < rows and 0 <= nc < cols:
                        if binary[nr, nc] and not labels[nr, nc]:
                            labels[nr, nc] = current
                            queue.append((nr, nc))
    return labels, current


def cluster_map(
    normalized: np.ndarray, delta: float, connectivity: int = 4
) -> ClusterMap:
    """Threshold a normalized map and label its connected regions.

    Applies the adaptive fallback when the initial threshold leaves no
    foreground at all.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValidationError(f"delta must be in [0, 1], got {delta}")
    delta_used = float(delta)
    binary = threshold_map(normalized, delta_used)
    while not binary.any():
        next_delta = delta_used - 0.05
        if next_delta < 0.0:
            break
        delta_used = next_delta
        binary = threshold_map(normalized, delta_used)
    labels, k = connected_components(binary, connectivity)
    return ClusterMap(labels=labels, k=k, delta_used=delta_used)
