"""Synthetic hard-edge test images: a two-tone half-plane, a disk on a
contrasting ground, and a 45-degree wedge.  All edges are step
discontinuities, which plain Gaussian blending can only blur."""

import numpy as np

DARK = np.array([0.12, 0.15, 0.2])
LIGHT = np.array([0.9, 0.85, 0.78])


def half_plane(size: int = 64) -> np.ndarray:
    t = np.empty((size, size, 3))
    t[:, : size // 2] = DARK
    t[:, size // 2 :] = LIGHT
    return t


def disk(size: int = 64) -> np.ndarray:
    yy, xx = np.indices((size, size)) + 0.5
    inside = (xx - size / 2) ** 2 + (yy - size / 2) ** 2 <= (0.28 * size) ** 2
    return np.where(inside[..., None], LIGHT, DARK).astype(float)


def wedge(size: int = 64) -> np.ndarray:
    """Vertex left of center, one horizontal edge and one diagonal edge
    opening to the right."""
    yy, xx = np.indices((size, size)) + 0.5
    vx, vy = size * 0.2, size * 0.5
    inside = (yy >= vy) & (yy - vy <= xx - vx)
    return np.where(inside[..., None], LIGHT, DARK).astype(float)


TARGETS = {"half_plane": half_plane, "disk": disk, "wedge": wedge}


def edge_band(target: np.ndarray, width: int = 2) -> np.ndarray:
    """Mask of pixels within `width` of the target's true edges (anywhere the
    target itself has a nonzero gradient, dilated)."""
    gy, gx = np.gradient(target.mean(axis=2))
    edge = np.hypot(gx, gy) > 1e-6
    for _ in range(width):
        grown = edge.copy()
        grown[1:] |= edge[:-1]
        grown[:-1] |= edge[1:]
        grown[:, 1:] |= edge[:, :-1]
        grown[:, :-1] |= edge[:, 1:]
        edge = grown
    return edge


def edge_gradient(image: np.ndarray, edge_mask: np.ndarray) -> float:
    """Mean finite-difference gradient magnitude over the edge band: higher
    means the rendered edge is sharper."""
    gy, gx = np.gradient(image.mean(axis=2))
    return float(np.hypot(gx, gy)[edge_mask].mean())
