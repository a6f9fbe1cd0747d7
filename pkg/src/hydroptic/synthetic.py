"""Seeded synthetic in-air scenes for fixtures and self-checks."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def synthetic_scene(rng: np.random.Generator, height: int = 64, width: int = 64, floor: float = 0.0) -> np.ndarray:
    """Colourful textured scene in [floor, 1].

    A smooth random colour field with a handful of hard-edged shapes and a bit
    of fine texture, so that colour, sharpness and contrast measures all have
    something to respond to.
    """
    field = rng.random((height, width, 3))
    field = ndimage.gaussian_filter(field, sigma=(max(height, width) / 8, max(height, width) / 8, 0))
    field = (field - field.min()) / max(np.ptp(field), 1e-12)
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(int(rng.integers(3, 7))):
        colour = rng.random(3)
        cy, cx = rng.random(2) * [height, width]
        if rng.random() < 0.5:
            r = rng.uniform(0.08, 0.25) * min(height, width)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        else:
            hh, ww = rng.uniform(0.1, 0.35, 2) * [height, width]
            mask = (np.abs(yy - cy) <= hh / 2) & (np.abs(xx - cx) <= ww / 2)
        field[mask] = 0.35 * field[mask] + 0.65 * colour
    field += 0.04 * rng.standard_normal((height, width, 3))
    return np.clip(field, 0.0, 1.0) * (1.0 - floor) + floor
