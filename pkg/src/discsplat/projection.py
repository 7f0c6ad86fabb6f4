"""Pinhole projection of 3D splats: centers, covariances (via the EWA
affine approximation), and exact perspective projection of curve control
points.  Forward-render only; no gradients flow through this path."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .scene import Splat, quat_to_matrix


@dataclass(frozen=True)
class Camera:
    view: np.ndarray  # 4x4 world-to-camera
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float

    def __post_init__(self):
        object.__setattr__(self, "view", np.asarray(self.view, dtype=float))
        if self.view.shape != (4, 4):
            raise ValueError("view must be 4x4")
        r = self.view[:3, :3]
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
            raise ValueError("view rotation block must be orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.near <= 0:
            raise ValueError("near plane must be positive")


def _to_camera(points: np.ndarray, cam: Camera) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return points @ cam.view[:3, :3].T + cam.view[:3, 3]


def _pinhole(t: np.ndarray, cam: Camera) -> np.ndarray:
    return np.stack(
        [cam.fx * t[..., 0] / t[..., 2] + cam.cx,
         cam.fy * t[..., 1] / t[..., 2] + cam.cy],
        axis=-1,
    )


def perspective_jacobian(t: np.ndarray, cam: Camera) -> np.ndarray:
    """2x3 Jacobian of the pinhole map at camera-space point t."""
    tx, ty, tz = t
    return np.array(
        [
            [cam.fx / tz, 0.0, -cam.fx * tx / tz**2],
            [0.0, cam.fy / tz, -cam.fy * ty / tz**2],
        ]
    )


def covariance_3x3(splat: Splat) -> np.ndarray:
    r = quat_to_matrix(splat.rotation)
    s2 = np.exp(2.0 * splat.log_scales)
    return (r * s2) @ r.T


def project_gaussian(
    splat: Splat, cam: Camera
) -> Optional[Tuple[np.ndarray, np.ndarray, float]]:
    """(mu2d, cov2d, depth), or None when the center is behind the near
    plane (culled)."""
    t = _to_camera(splat.center, cam)[0]
    if t[2] <= cam.near:
        return None
    j = perspective_jacobian(t, cam)
    w3 = cam.view[:3, :3]
    cov2d = j @ w3 @ covariance_3x3(splat) @ w3.T @ j.T
    return _pinhole(t, cam), cov2d, float(t[2])


def lift_control_points(splat: Splat) -> np.ndarray:
    """Local 2D curve offsets to world 3D points along the first two
    rotation columns, anchored at the center."""
    r = quat_to_matrix(splat.rotation)
    return splat.center + splat.c_curve @ r[:, :2].T


def project_control_points(points3d: np.ndarray, cam: Camera) -> Optional[np.ndarray]:
    """Exact perspective projection of world points; None when any point
    falls behind the near plane (the owning splat is culled)."""
    t = _to_camera(points3d, cam)
    if np.any(t[:, 2] <= cam.near):
        return None
    return _pinhole(t, cam)


def camera_to_dict(cam: Camera) -> dict:
    return {
        "view": cam.view.reshape(-1).tolist(),
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "near": cam.near,
    }


def camera_from_dict(d: dict) -> Camera:
    return Camera(
        view=np.array(d["view"], dtype=float).reshape(4, 4),
        fx=float(d["fx"]),
        fy=float(d["fy"]),
        cx=float(d["cx"]),
        cy=float(d["cy"]),
        width=int(d["width"]),
        height=int(d["height"]),
        near=float(d["near"]),
    )


def load_camera(path) -> Camera:
    return camera_from_dict(json.loads(Path(path).read_text()))


def save_camera(cam: Camera, path) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(cam), indent=1))
