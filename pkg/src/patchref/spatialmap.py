"""Patch similarity maps and resampling to image resolution.

A similarity map assigns each patch in the p-by-p grid the cosine between
its projected embedding and the text context feature.  Maps are min-max
normalized to [0, 1] before thresholding; float maps are upsampled
bilinearly (align_corners = False) and integer label maps by nearest
neighbour, matching the downsampling ratio between the patch grid and the
mask resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensorio import ProjectionParams
from .textfusion import project_hidden


@dataclass
class SpatialMap:
    """Raw and normalized per-patch similarity for one sample/layer."""

    raw: np.ndarray  # (p, p) cosines in [-1, 1]
    normalized: np.ndarray  # (p, p) in [0, 1]
    zero_norm_patches: int  # patches whose projected embedding had zero norm


def similarity_map(
    patch_embeddings: np.ndarray, e_context: np.ndarray, params: ProjectionParams
) -> SpatialMap:
    """Cosine of every projected patch against the context feature.

    Patches that project to the zero vector get cosine 0.0 and are
    counted in ``zero_norm_patches``.
    """
    projected = project_hidden(patch_embeddings, params)  # (p, p, d)
    ctx = np.asarray(e_context, dtype=np.float64)
    ctx_norm = float(np.linalg.norm(ctx))
    if ctx_norm == 0.0:
        raise ValidationError("context embedding has zero norm")
    norms = np.linalg.norm(projected, axis=-1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    raw = (projected @ ctx) / (safe * ctx_norm)
    raw[zero] = 0.0
    raw = np.clip(raw, -1.0, 1.0)
    return SpatialMap(
        raw=raw, normalized=minmax_normalize(raw), zero_norm_patches=int(zero.sum())
    )


def minmax_normalize(m: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]; a constant map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo = float(m.min())
    hi = float(m.max())
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def upsample_bilinear(m: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with align_corners = False semantics.

    Sample centres sit at (i + 0.5) * src/dst - 0.5, clamped at the
    borders.  Written in lerp form so a constant input stays exactly
    constant.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"expected a 2-d map, got shape {m.shape}")
    sh, sw = m.shape
    if height < 1 or width < 1:
        raise ValidationError(f"bad target size ({height}, {width})")
    out = np.empty((height, width), dtype=np.float64)
    ys = (np.arange(height, dtype=np.float64) + 0.5) * (sh / height) - 0.5
    xs = (np.arange(width, dtype=np.float64) + 0.5) * (sw / width) - 0.5
    y0 = np.clip(np.floor(ys), 0, sh - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, sw - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    v00 = m[np.ix_(y0, x0)]
    v01 = m[np.ix_(y0, x1)]
    v10 = m[np.ix_(y1, x0)]
    v11 = m[np.ix_(y1, x1)]
    top = v00 + (v01 - v00) * fx
    bottom = v10 + (v11 - v10) * fx
    out[:] = top + (bottom - top) * fy
    return out


def upsample_nearest(labels: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour upsample for integer label maps.

    Output pixel (i, j) copies source cell (i * p // height, j * p // width),
    so each patch expands to a contiguous block.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValidationError(f"expected a 2-d label map, got shape {labels.shape}")
    sh, sw = labels.shape
    if height < 1 or width < 1:
        raise ValidationError(f"bad target size ({height}, {width})")
    rows = (np.arange(height, dtype=np.int64) * sh) // height
    cols = (np.arange(width, dtype=np.int64) * sw) // width
    return labels[np.ix_(rows, cols)]
