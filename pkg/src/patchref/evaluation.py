"""IoU metrics over binary masks.

All counts are exact integer pixel counts; only the final division is
floating point.  Two empty masks count as a perfect match, one empty
mask as a complete miss.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two 0/1 masks of equal shape."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return inter / union


def intersection_union_counts(a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    """Raw (intersection, union) pixel counts for aggregate metrics."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a & b)), int(np.count_nonzero(a | b))


def mean_iou(values: list[float]) -> float:
    """Plain mean of per-sample IoU values."""
    if not values:
        raise ValidationError("mean_iou needs at least one value")
    total = 0.0
    for v in values:  # left-to-right sum, no pairwise reassociation
        total += v
    return total / len(values)


def overall_iou(counts: list[tuple[int, int]]) -> float:
    """Ratio of summed intersections to summed unions across samples."""
    if not counts:
        raise ValidationError("overall_iou needs at least one sample")
    inter = 0
    union = 0
    for i, u in counts:
        inter += i
        union += u
    if union == 0:
        return 1.0
    return inter / union
