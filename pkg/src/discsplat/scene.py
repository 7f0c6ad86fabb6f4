"""Splat parameterization and the serializable scene container.

Raw optimizable parameters map to constrained quantities: scales through
exp, opacity through a sigmoid, orientation through a rotation built from
the angle (2D) or quaternion (3D).  Curve control points are stored in the
splat's local frame and mapped to the image plane on demand.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import expit

from .bezier import implicitize_batch

FORMAT_VERSION = 1

# Diagonal regularization (pixels^2) the rasterizer adds to the 2D
# covariance before inversion.  Initialization sizes its non-cutting arcs
# against this enlarged footprint: a splat's rendered support can exceed
# 3 * max(scale) when the raw scales are sub-pixel.
COV_REG = 0.1


class SceneMode(str, Enum):
    flat2d = "flat2d"
    projected3d = "projected3d"
    projected3d_curve3d = "projected3d_curve3d"


@dataclass
class Splat:
    """Per-splat parameter bundle.

    In flat2d mode: center (2,), rotation = angle in radians, log_scales
    (2,), c_curve (4M, 2) local offsets.  In the 3D modes: center (3,),
    rotation = unit quaternion (4,) as (w, x, y, z), log_scales (3,), and
    c_curve holds local 2D offsets (projected3d) or world 3D coordinates
    (projected3d_curve3d).
    """

    center: np.ndarray
    rotation: Union[float, np.ndarray]
    log_scales: np.ndarray
    raw_opacity: float
    color: np.ndarray
    c_curve: np.ndarray
    depth_key: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.log_scales = np.asarray(self.log_scales, dtype=float)
        self.color = np.asarray(self.color, dtype=float)
        self.c_curve = np.asarray(self.c_curve, dtype=float)
        if not np.isscalar(self.rotation) and not isinstance(self.rotation, float):
            self.rotation = np.asarray(self.rotation, dtype=float)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacity(self) -> float:
        return float(expit(self.raw_opacity))


def rot2d(theta):
    """2x2 rotation matrices; broadcasts over an array of angles."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack(
        [np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2
    )


def quat_to_matrix(q):
    """3x3 rotation from a (w, x, y, z) quaternion, normalized first."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def covariance_2x2(splat: Splat) -> np.ndarray:
    """Sigma = R(theta) diag(s1^2, s2^2) R(theta)^T; PSD for any raw values."""
    r = rot2d(splat.rotation)
    s2 = np.exp(2.0 * splat.log_scales)
    return (r * s2) @ r.T


def covariances_2x2(thetas: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    """Batch form of covariance_2x2 over (n,) angles and (n, 2) log scales."""
    r = rot2d(thetas)
    s2 = np.exp(2.0 * log_scales)
    return (r * s2[:, None, :]) @ np.swapaxes(r, -1, -2)


def curve_points_to_image(splat: Splat) -> np.ndarray:
    """Map local curve offsets to image-plane points: center + R(theta) @ c."""
    r = rot2d(splat.rotation)
    return splat.center + splat.c_curve @ r.T


def curves_to_image_batch(
    centers: np.ndarray, thetas: np.ndarray, c_curves: np.ndarray
) -> np.ndarray:
    """(n, 4M, 2) image-plane control points from per-splat local offsets."""
    r = rot2d(thetas)
    return centers[:, None, :] + np.einsum("nij,nkj->nki", r, c_curves)


@dataclass
class Scene:
    """Structure-of-arrays scene container; all splats share M and mode.

    flat2d layout: centers (n, 2), rotations (n,) angles, log_scales (n, 2),
    c_curves (n, 4M, 2).  3D modes widen those to 3-vectors / quaternions.
    """

    mode: SceneMode
    M: int
    background: np.ndarray
    centers: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    raw_opacities: np.ndarray
    colors: np.ndarray
    c_curves: np.ndarray
    depth_keys: np.ndarray

    def __post_init__(self):
        self.mode = SceneMode(self.mode)
        self.background = np.asarray(self.background, dtype=float)
        for name in (
            "centers",
            "rotations",
            "log_scales",
            "raw_opacities",
            "colors",
            "c_curves",
            "depth_keys",
        ):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.centers.shape[0]
        if self.c_curves.shape[:2] != (n, 4 * self.M):
            raise ValueError(
                f"c_curves must have shape (n, 4M, .), got {self.c_curves.shape}"
            )
        if self.mode == SceneMode.flat2d and n:
            if len(np.unique(self.depth_keys)) != n:
                raise ValueError("depth keys must be unique in flat2d mode")

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    def splat(self, i: int) -> Splat:
        rot = self.rotations[i]
        return Splat(
            center=self.centers[i],
            rotation=float(rot) if rot.ndim == 0 else rot,
            log_scales=self.log_scales[i],
            raw_opacity=float(self.raw_opacities[i]),
            color=self.colors[i],
            c_curve=self.c_curves[i],
            depth_key=float(self.depth_keys[i]),
        )

    @property
    def splats(self) -> list:
        return [self.splat(i) for i in range(self.n)]

    @classmethod
    def from_splats(cls, splats, M, mode, background) -> "Scene":
        mode = SceneMode(mode)
        return cls(
            mode=mode,
            M=M,
            background=np.asarray(background, dtype=float),
            centers=np.stack([s.center for s in splats]),
            rotations=np.stack([np.asarray(s.rotation, dtype=float) for s in splats]),
            log_scales=np.stack([s.log_scales for s in splats]),
            raw_opacities=np.array([s.raw_opacity for s in splats], dtype=float),
            colors=np.stack([s.color for s in splats]),
            c_curves=np.stack([s.c_curve for s in splats]),
            depth_keys=np.array([s.depth_key for s in splats], dtype=float),
        )


# --- initialization ---------------------------------------------------------

# Arc layout, in units of d = 4 * sqrt(max(s)^2 + COV_REG): endpoints sit at
# local distance d along the arc's direction with half-width d across it, the
# interior control points bow outward asymmetrically (0.12d / 0.08d) so the
# cubic term survives and orientation can be fixed by control-order reversal.
# The cross-arc coordinate stays linear in t, making the implicit curve a
# single function graph u = f(v) with f >= d on |v| <= d; the full rendered
# support (radius ~3.3 sigma of the regularized covariance, < d) therefore
# lies strictly on one side.
_ARC_U = np.array([1.0, 1.12, 1.08, 1.0])
_ARC_V = np.array([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0])

_MONO_POWS = np.array(
    [
        (3, 0), (2, 1), (1, 2), (0, 3),
        (2, 0), (1, 1), (0, 2),
        (1, 0), (0, 1), (0, 0),
    ]
)


def _eval_gammas(gammas: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    monos = x[:, None] ** _MONO_POWS[:, 0] * y[:, None] ** _MONO_POWS[:, 1]
    return np.sum(gammas * monos, axis=1)


def _init_arcs(d: np.ndarray, M: int) -> np.ndarray:
    """(n, 4M, 2) local control points, arc k aimed at angle 2*pi*k/M."""
    n = d.shape[0]
    ang = 2.0 * np.pi * np.arange(M) / M
    u = np.stack([np.cos(ang), np.sin(ang)], axis=-1)  # (M, 2)
    v = np.stack([-np.sin(ang), np.cos(ang)], axis=-1)
    # (M, 4, 2) unit-d layout, then scale by per-splat d
    layout = _ARC_U[None, :, None] * u[:, None, :] + _ARC_V[None, :, None] * v[:, None, :]
    return (d[:, None, None, None] * layout[None]).reshape(n, 4 * M, 2)


def init_scene(
    width: int,
    height: int,
    n: int,
    M: int,
    seed: int,
    target: Optional[np.ndarray] = None,
    background=(0.0, 0.0, 0.0),
) -> Scene:
    """Deterministic starting scene: jittered-grid centers, scales sized so
    each splat covers ~(width*height/n) area, opacity 0.5, colors sampled
    from `target` (H, W, 3 floats in [0,1]) when given, and non-cutting
    curve arcs oriented to keep the indicator at 1 over each splat's
    rendered support.
    """
    if n < 1 or M < 1:
        raise ValueError("need at least one splat and one curve per splat")
    rng = np.random.default_rng(seed)

    gx = max(1, math.ceil(math.sqrt(n * width / max(height, 1))))
    gy = math.ceil(n / gx)
    cells = np.arange(n)
    cw, ch = width / gx, height / gy
    cx = (cells % gx + 0.5) * cw
    cy = (cells // gx + 0.5) * ch
    jitter = rng.uniform(-0.2, 0.2, size=(n, 2)) * np.array([cw, ch])
    centers = np.stack([cx, cy], axis=-1) + jitter

    # 1-sigma ellipse area ~ target cell area: pi * s^2 = w*h/n
    s0 = math.sqrt(width * height / (n * math.pi))
    log_scales = math.log(s0) + rng.uniform(-0.1, 0.1, size=(n, 2))
    thetas = rng.uniform(0.0, 2.0 * np.pi, size=n)
    raw_opacities = np.zeros(n)  # sigmoid(0) = 0.5

    if target is not None:
        target = np.asarray(target, dtype=float)
        col = np.clip(centers[:, 0].astype(int), 0, target.shape[1] - 1)
        row = np.clip(centers[:, 1].astype(int), 0, target.shape[0] - 1)
        colors = target[row, col].copy()
    else:
        colors = np.full((n, 3), 0.5)

    smax = np.exp(log_scales).max(axis=1)
    d = 4.0 * np.sqrt(smax**2 + COV_REG)
    c_curves = _init_arcs(d, M)

    # Orient each arc so the implicit form is positive at the splat center
    # (and hence over the whole support, which the arc layout keeps on one
    # side): reverse control order where the sign comes out negative.
    pts = curves_to_image_batch(centers, thetas, c_curves).reshape(n * M, 4, 2)
    gammas, _, is_line, ok = implicitize_batch(pts)
    if not ok.all() or is_line.any():
        raise AssertionError("init arcs must implicitize to genuine cubics")
    px = np.repeat(centers[:, 0], M)
    py = np.repeat(centers[:, 1], M)
    flip = (_eval_gammas(gammas, px, py) <= 0.0).reshape(n, M)
    curves_view = c_curves.reshape(n, M, 4, 2)
    curves_view[flip] = curves_view[flip][:, ::-1]

    return Scene(
        mode=SceneMode.flat2d,
        M=M,
        background=np.asarray(background, dtype=float),
        centers=centers,
        rotations=thetas,
        log_scales=log_scales,
        raw_opacities=raw_opacities,
        colors=colors,
        c_curves=c_curves,
        depth_keys=np.arange(n, dtype=float),
    )


# --- serialization ----------------------------------------------------------


def scene_to_dict(scene: Scene) -> dict:
    is3d = scene.mode != SceneMode.flat2d
    rot_key = "quat" if is3d else "theta"
    curve_key = "c3d_curve" if scene.mode == SceneMode.projected3d_curve3d else "c_curve"
    splats = []
    for i in range(scene.n):
        rot = scene.rotations[i]
        splats.append(
            {
                "center": scene.centers[i].tolist(),
                rot_key: rot.tolist() if is3d else float(rot),
                "log_scales": scene.log_scales[i].tolist(),
                "raw_opacity": float(scene.raw_opacities[i]),
                "color": scene.colors[i].tolist(),
                curve_key: scene.c_curves[i].tolist(),
                "depth_key": float(scene.depth_keys[i]),
            }
        )
    return {
        "format_version": FORMAT_VERSION,
        "mode": scene.mode.value,
        "M": scene.M,
        "background": scene.background.tolist(),
        "splats": splats,
    }


def scene_from_dict(d: dict) -> Scene:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported scene format: {d.get('format_version')!r}")
    mode = SceneMode(d["mode"])
    is3d = mode != SceneMode.flat2d
    rot_key = "quat" if is3d else "theta"
    curve_key = "c3d_curve" if mode == SceneMode.projected3d_curve3d else "c_curve"
    sp = d["splats"]
    dim = 3 if is3d else 2
    cdim = 3 if mode == SceneMode.projected3d_curve3d else 2
    n = len(sp)
    return Scene(
        mode=mode,
        M=int(d["M"]),
        background=np.array(d["background"], dtype=float),
        centers=np.array([s["center"] for s in sp], dtype=float).reshape(n, dim),
        rotations=np.array([s[rot_key] for s in sp], dtype=float),
        log_scales=np.array([s["log_scales"] for s in sp], dtype=float).reshape(n, dim),
        raw_opacities=np.array([s["raw_opacity"] for s in sp], dtype=float),
        colors=np.array([s["color"] for s in sp], dtype=float).reshape(n, 3),
        c_curves=np.array([s[curve_key] for s in sp], dtype=float).reshape(
            n, 4 * int(d["M"]), cdim
        ),
        depth_keys=np.array([s["depth_key"] for s in sp], dtype=float),
    )


def scene_to_json(scene: Scene) -> str:
    # json renders floats with repr (shortest exact round-trip), so
    # write -> read -> write is byte-identical by construction
    return json.dumps(scene_to_dict(scene), indent=1)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(scene_to_json(scene))


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))
