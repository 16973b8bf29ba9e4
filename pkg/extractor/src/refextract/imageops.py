"""Thin wrappers around Pillow.

Everything works on float64 RGB arrays in [0, 1]; Pillow only enters
for decoding, resizing, and blurring, all of which are deterministic.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageFilter

from .errors import ExtractorError


def load_rgb(path) -> np.ndarray:
    """Decode any Pillow-supported image to (H, W, 3) float64 in [0, 1]."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            return np.asarray(rgb, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise ExtractorError(f"{path}: cannot decode image: {exc}")


def to_image(rgb: np.ndarray) -> Image.Image:
    clipped = np.clip(rgb * 255.0 + 0.5, 0.0, 255.0).astype(np.uint8)
    return Image.fromarray(clipped, mode="RGB")


def resize_rgb(rgb: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize to a square ``size`` x ``size`` frame."""
    im = to_image(rgb).resize((size, size), Image.BILINEAR)
    return np.asarray(im, dtype=np.float64) / 255.0


def load_mask(path, size: int) -> np.ndarray:
    """Decode a mask image to 0/1 uint8 at ``size`` x ``size``.

    Any pixel above half intensity counts as foreground; nearest
    neighbor keeps the result binary through the resize.
    """
    try:
        with Image.open(path) as im:
            gray = im.convert("L").resize((size, size), Image.NEAREST)
    except (OSError, ValueError) as exc:
        raise ExtractorError(f"{path}: cannot decode mask: {exc}")
    return (np.asarray(gray) > 127).astype(np.uint8)


def box_blur(rgb: np.ndarray, radius: int) -> np.ndarray:
    im = to_image(rgb).filter(ImageFilter.BoxBlur(radius))
    return np.asarray(im, dtype=np.float64) / 255.0
