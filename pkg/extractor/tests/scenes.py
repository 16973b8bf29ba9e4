"""Synthetic scenes: flat-color rectangles the proposer finds exactly."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image


def paint_scene(path: Path, size: int = 56, background=(40, 40, 40),
                boxes=()) -> None:
    """Write a PNG of axis-aligned colored rectangles.

    ``boxes`` rows are (r0, r1, c0, c1, (r, g, b)) with half-open pixel
    ranges.  Keeping images at the extraction frame size makes the
    resize step an identity, so region boundaries stay crisp.
    """
    arr = np.full((size, size, 3), background, dtype=np.uint8)
    for r0, r1, c0, c1, color in boxes:
        arr[r0:r1, c0:c1] = color
    Image.fromarray(arr, mode="RGB").save(path)


def paint_mask(path: Path, size: int, box) -> None:
    """Write a grayscale PNG mask, white inside ``box``."""
    arr = np.zeros((size, size), dtype=np.uint8)
    r0, r1, c0, c1 = box
    arr[r0:r1, c0:c1] = 255
    Image.fromarray(arr, mode="L").save(path)


def write_slice(directory: Path, samples: list[dict]) -> Path:
    path = directory / "slice.json"
    path.write_text(json.dumps({"samples": samples}, indent=2))
    return path


RED = (200, 30, 30)
BLUE = (30, 30, 200)
GREEN = (30, 170, 60)


def standard_scene(directory: Path, name: str = "scene.png"):
    """One 56x56 frame with a red box upper-left, blue box lower-right."""
    path = directory / name
    paint_scene(path, boxes=[
        (8, 24, 8, 24, RED),
        (32, 48, 32, 48, BLUE),
    ])
    return path
