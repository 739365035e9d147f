"""Rainfall map rendering: category-colored binary PPM (P6) images.

The fixed palette keys on intensity category: white for no rain, blue /
green / orange / red for light through violent, gray for missing cells.
PPM needs no codec, so identical grids always produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grids import PrecipCategory, RainGrid, categorize_values

PALETTE = {
    PrecipCategory.MISSING: (128, 128, 128),
    PrecipCategory.NO_RAIN: (255, 255, 255),
    PrecipCategory.LIGHT: (65, 105, 225),
    PrecipCategory.MODERATE: (60, 179, 75),
    PrecipCategory.HEAVY: (255, 165, 0),
    PrecipCategory.VIOLENT: (220, 30, 30),
}


def render_rgb(grid: RainGrid) -> np.ndarray:
    codes = categorize_values(grid.values)
    img = np.zeros((grid.rows, grid.cols, 3), dtype=np.uint8)
    for category, color in PALETTE.items():
        img[codes == int(category)] = color
    return img


def render_map(grid: RainGrid, path) -> None:
    img = render_rgb(grid)
    header = f"P6\n{grid.cols} {grid.rows}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())
