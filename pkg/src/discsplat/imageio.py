"""PNG image I/O: 8-bit sRGB only, mapped linearly to floats in [0, 1].

No gamma handling — fitting operates directly on the stored sRGB values.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def load_png(path) -> np.ndarray:
    """Read a PNG as (H, W, 3) float64 in [0, 1]; grayscale/alpha inputs are
    converted to plain RGB first."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.uint8)
    return arr.astype(float) / 255.0


def save_png(image: np.ndarray, path) -> None:
    """Write (H, W, 3) floats as 8-bit RGB; values are clipped to [0, 1]
    and rounded to the nearest level, so bytes are deterministic."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    levels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(levels, mode="RGB").save(path, format="PNG")
