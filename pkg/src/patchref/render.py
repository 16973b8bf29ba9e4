"""PPM rendering of similarity maps and cluster labels.

Output is binary PPM (P6, maxval 255), chosen so renders are plain
concatenations of RGB bytes and byte-for-byte reproducible.  Similarity
values are mapped from [-1, 1] to [0, 1], upsampled bilinearly and run
through a five-anchor colormap; label maps are upsampled by nearest
neighbour and drawn with a fixed 12-colour palette, background black.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .spatialmap import upsample_bilinear, upsample_nearest

# Dark blue through purple and orange to yellow, anchored every 0.25.
COLORMAP_ANCHORS = (
    (13, 8, 135),
    (126, 3, 168),
    (204, 71, 120),
    (248, 149, 64),
    (240, 249, 33),
)

# Label 1 takes the first entry; labels wrap after 12.
LABEL_PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 212),
    (0, 128, 128),
    (220, 190, 255),
)


def colormap_value(v: float) -> tuple[int, int, int]:
    """Map a value in [0, 1] to RGB by piecewise-linear interpolation."""
    v = min(1.0, max(0.0, float(v)))
    segment = min(int(v * 4), 3)
    frac = v * 4 - segment
    c0 = COLORMAP_ANCHORS[segment]
    c1 = COLORMAP_ANCHORS[segment + 1]
    return tuple(int(c0[i] + (c1[i] - c0[i]) * frac + 0.5) for i in range(3))


def write_ppm(rgb: np.ndarray, path) -> None:
    """Write an (H, W, 3) uint8 image as binary PPM."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValidationError(
            f"expected (H, W, 3) uint8 image, got shape {rgb.shape} dtype {rgb.dtype}"
        )
    height, width = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (width, height))
        fh.write(rgb.tobytes())


def render_similarity(raw: np.ndarray, height: int, width: int) -> np.ndarray:
    """Colour image of a raw cosine map at the requested resolution."""
    raw = np.asarray(raw, dtype=np.float64)
    shifted = (raw + 1.0) / 2.0
    up = upsample_bilinear(shifted, height, width)
    out = np.empty((height, width, 3), dtype=np.uint8)
    for r in range(height):
        for c in range(width):
            out[r, c] = colormap_value(up[r, c])
    return out


def render_labels(labels: np.ndarray, height: int, width: int) -> np.ndarray:
    """Colour image of a cluster label map; background stays black."""
    up = upsample_nearest(np.asarray(labels), height, width)
    out = np.zeros((height, width, 3), dtype=np.uint8)
    for r in range(height):
        for c in range(width):
            label = int(up[r, c])
            if label > 0:
                out[r, c] = LABEL_PALETTE[(label - 1) % len(LABEL_PALETTE)]
    return out
