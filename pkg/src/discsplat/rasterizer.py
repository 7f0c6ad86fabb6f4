"""Tile-based forward rasterizer: depth-ordered front-to-back alpha
blending where each contribution is gated by the product of per-curve
scissor indicators, plus the tape the backward pass replays.

Pixel centers sit at (col + 0.5, row + 0.5).  Rendering parallelizes over
16x16 tiles; every tile owns a disjoint slice of the output and its own
tape segment, so results are bitwise independent of scheduling order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.special import expit

from .bezier import ImplicitCubic, implicitize_batch
from .projection import Camera, lift_control_points, project_control_points, project_gaussian
from .scene import (
    COV_REG,
    Scene,
    SceneMode,
    covariances_2x2,
    curves_to_image_batch,
)

TILE = 16
CONTRIB_CUTOFF = 1.0 / 255.0
TERMINATION = 1e-4
# a pixel's unscissored weight clears the contribution cutoff out to
# sqrt(2 ln 255) sigma (~3.33), slightly past the 3-sigma ellipse; the
# bbox must contain all of them
BBOX_SIGMA = float(np.sqrt(2.0 * np.log(255.0)))


def thread_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    return max(1, int(os.environ.get("DISCSPLAT_THREADS", "1")))


@dataclass
class ProjectedSplat:
    splat_id: int  # index into the owning scene's arrays
    mu2d: np.ndarray
    inv_cov: np.ndarray  # (a, b, c) of [[a, b], [b, c]], regularized
    color: np.ndarray
    alpha: float
    depth: float
    gammas: np.ndarray  # (M, 10) implicit coefficients
    lines: np.ndarray  # (M, 3) line fallback coefficients
    is_line: np.ndarray  # (M,) bools
    control_points: np.ndarray  # (4M, 2) image-plane control points
    bbox: tuple  # (x0, y0, x1, y1) pixel bounds, upper exclusive

    @property
    def curves(self) -> List[ImplicitCubic]:
        out = []
        for k in range(len(self.gammas)):
            if self.is_line[k]:
                out.append(ImplicitCubic(gamma=np.zeros(10), degenerate_line=self.lines[k]))
            else:
                out.append(ImplicitCubic(gamma=self.gammas[k]))
        return out


@dataclass
class Contribution:
    splat_id: int
    idx: np.ndarray  # flat row-major indices into the tile's pixels
    weight: np.ndarray  # gaussian weight exp(-0.5 d^T Sigma^-1 d)
    g: np.ndarray  # indicator value (0.0 on scissored-out pixels)
    beta: np.ndarray  # alpha * g * weight (zero where g = 0)
    t_before: np.ndarray  # transmittance at this contributor's turn
    # index of the single curve responsible where g = 0, else -1; pixels cut
    # by two or more curves are not taped (no single coordinate can restore
    # them, so every curve's sensitivity there is zero)
    cut_curve: Optional[np.ndarray] = None


@dataclass
class TileTape:
    x0: int
    y0: int
    w: int
    h: int
    contribs: List[Contribution]


@dataclass
class RenderTape:
    width: int
    height: int
    background: np.ndarray
    n_prepared: int
    image: np.ndarray  # (H, W, 3)
    t_final: np.ndarray  # (H, W)
    tiles: List[TileTape]

    def pixel_records(self, col: int, row: int):
        """Ordered (splat_id, weight, g, beta, t_before) tuples for a pixel;
        test/diagnostic path, not used by the hot loops."""
        tile = self.tiles[(row // TILE) * ((self.width + TILE - 1) // TILE) + col // TILE]
        flat = (row - tile.y0) * tile.w + (col - tile.x0)
        out = []
        for c in tile.contribs:
            hit = np.nonzero(c.idx == flat)[0]
            if hit.size:
                j = hit[0]
                out.append((c.splat_id, c.weight[j], c.g[j], c.beta[j], c.t_before[j]))
        return out


def _invert_cov(cov: np.ndarray) -> np.ndarray:
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    return np.stack([c / det, -b / det, a / det], axis=-1)


def _bboxes(mu: np.ndarray, cov: np.ndarray, width: int, height: int) -> np.ndarray:
    rx = BBOX_SIGMA * np.sqrt(cov[:, 0, 0])
    ry = BBOX_SIGMA * np.sqrt(cov[:, 1, 1])
    x0 = np.clip(np.floor(mu[:, 0] - rx), 0, width).astype(int)
    x1 = np.clip(np.ceil(mu[:, 0] + rx) + 1, 0, width).astype(int)
    y0 = np.clip(np.floor(mu[:, 1] - ry), 0, height).astype(int)
    y1 = np.clip(np.ceil(mu[:, 1] + ry) + 1, 0, height).astype(int)
    return np.stack([x0, y0, x1, y1], axis=-1)


def prepare(scene: Scene, cam: Optional[Camera] = None, width=None, height=None):
    """Project, regularize, implicitize, and depth-sort the scene's splats.
    Returns front-most-first ProjectedSplats; culled splats are omitted."""
    if scene.mode == SceneMode.flat2d:
        if width is None or height is None:
            raise ValueError("flat2d prepare needs width and height")
        mu = scene.centers
        cov = covariances_2x2(scene.rotations, scene.log_scales)
        depth = scene.depth_keys
        pts = curves_to_image_batch(scene.centers, scene.rotations, scene.c_curves)
        keep = np.arange(scene.n)
    else:
        if cam is None:
            raise ValueError("3D modes require a camera")
        width = cam.width if width is None else width
        height = cam.height if height is None else height
        mu_l, cov_l, depth_l, pts_l, keep = [], [], [], [], []
        for i in range(scene.n):
            s = scene.splat(i)
            got = project_gaussian(s, cam)
            if got is None:
                continue
            if scene.mode == SceneMode.projected3d:
                world = lift_control_points(s)
            else:
                world = s.c_curve  # already world 3D coordinates
            proj = project_control_points(world, cam)
            if proj is None:
                continue
            mu_l.append(got[0])
            cov_l.append(got[1])
            depth_l.append(got[2])
            pts_l.append(proj)
            keep.append(i)
        if not keep:
            return []
        mu = np.stack(mu_l)
        cov = np.stack(cov_l)
        depth = np.array(depth_l)
        pts = np.stack(pts_l)
        keep = np.array(keep)

    n = len(keep)
    if n == 0:
        return []
    cov = cov.copy()
    cov[:, 0, 0] += COV_REG
    cov[:, 1, 1] += COV_REG
    inv_cov = _invert_cov(cov)
    bbox = _bboxes(mu, cov, width, height)
    alphas = expit(scene.raw_opacities[keep])
    colors = scene.colors[keep]

    M = scene.M
    gammas, lines, is_line, ok = implicitize_batch(pts.reshape(n * M, 4, 2))
    # a fully collapsed curve has no boundary; treat it as non-cutting
    bad = ~ok
    if bad.any():
        is_line = is_line | bad
        lines = lines.copy()
        lines[bad] = [0.0, 0.0, 1.0]
    gammas = gammas.reshape(n, M, 10)
    lines = lines.reshape(n, M, 3)
    is_line = is_line.reshape(n, M)

    order = np.argsort(depth, kind="stable")
    return [
        ProjectedSplat(
            splat_id=int(keep[i]),
            mu2d=mu[i],
            inv_cov=inv_cov[i],
            color=colors[i],
            alpha=float(alphas[i]),
            depth=float(depth[i]),
            gammas=gammas[i],
            lines=lines[i],
            is_line=is_line[i],
            control_points=pts[i],
            bbox=tuple(int(v) for v in bbox[i]),
        )
        for i in order
    ]


def curve_factors(ps: ProjectedSplat, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(M, P) per-curve indicator factors at the given points."""
    x2 = x * x
    y2 = y * y
    out = np.empty((len(ps.gammas),) + x.shape, dtype=bool)
    for k in range(len(ps.gammas)):
        if ps.is_line[k]:
            a, b, c = ps.lines[k]
            val = a * x + b * y + c
        else:
            gm = ps.gammas[k]
            val = (
                gm[0] * x2 * x + gm[1] * x2 * y + gm[2] * x * y2 + gm[3] * y2 * y
                + gm[4] * x2 + gm[5] * x * y + gm[6] * y2
                + gm[7] * x + gm[8] * y + gm[9]
            )
        out[k] = val > 0.0
    return out


def eval_curves(ps: ProjectedSplat, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indicator product over the splat's curves at the given points."""
    return curve_factors(ps, x, y).all(axis=0).astype(float)


def _tile_pixels(x0: int, y0: int, w: int, h: int):
    cols = np.tile(np.arange(x0, x0 + w), h)
    rows = np.repeat(np.arange(y0, y0 + h), w)
    return cols + 0.5, rows + 0.5, cols, rows


def _monomials(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(10, P) cubic monomial basis in the implicit coefficient order."""
    x2 = x * x
    y2 = y * y
    return np.stack(
        [x2 * x, x2 * y, x * y2, y2 * y, x2, x * y, y2, x, y, np.ones_like(x)]
    )


def _blend_tile(prepared, ids, x0, y0, w, h, background, with_curves, with_tape):
    X, Y, cols, rows = _tile_pixels(x0, y0, w, h)
    P = w * h
    T = np.ones(P)
    C = np.zeros((P, 3))
    active = np.ones(P, dtype=bool)
    contribs = []
    mono = _monomials(X, Y) if with_curves else None
    for i in ids:
        ps = prepared[i]
        bx0, by0, bx1, by1 = ps.bbox
        inside = (cols >= bx0) & (cols < bx1) & (rows >= by0) & (rows < by1)
        if not inside.any():
            continue
        dx = X - ps.mu2d[0]
        dy = Y - ps.mu2d[1]
        a, b, c = ps.inv_cov
        m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        weight = np.exp(-0.5 * m)
        aw = ps.alpha * weight
        sig = inside & active & (aw >= CONTRIB_CUTOFF)
        if with_curves:
            if ps.is_line.any():
                fac = curve_factors(ps, X, Y)
            else:
                fac = (ps.gammas @ mono) > 0.0
            mask = sig & fac.all(axis=0)
        else:
            fac = None
            mask = sig
        if with_tape and fac is not None:
            # scissored-out pixels stay on the tape when exactly one curve
            # cuts: that curve still has a restoring sensitivity there
            tmask = sig & ((len(fac) - fac.sum(axis=0)) <= 1)
        else:
            tmask = mask
        if not tmask.any():
            continue
        tidx = np.nonzero(tmask)[0]
        tape_tb = T[tidx]
        idx = np.nonzero(mask)[0]
        t_before = T[idx]
        tb = t_before * aw[idx]
        C[idx] += tb[:, None] * ps.color
        T[idx] = t_before - tb
        active[idx] = T[idx] >= TERMINATION
        if with_tape:
            if fac is not None:
                gv = fac.all(axis=0)[tidx]
                cutk = np.where(gv, -1, np.argmax(~fac[:, tidx], axis=0))
            else:
                gv = np.ones(len(tidx), dtype=bool)
                cutk = np.full(len(tidx), -1)
            contribs.append(
                Contribution(
                    splat_id=ps.splat_id,
                    idx=tidx,
                    weight=weight[tidx],
                    g=gv.astype(float),
                    beta=aw[tidx] * gv,
                    t_before=tape_tb,
                    cut_curve=cutk,
                )
            )
    C += T[:, None] * background
    return C.reshape(h, w, 3), T.reshape(h, w), contribs


def _bin_tiles(prepared, width: int, height: int):
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    bins = [[] for _ in range(ntx * nty)]
    for i, ps in enumerate(prepared):
        bx0, by0, bx1, by1 = ps.bbox
        if bx0 >= bx1 or by0 >= by1:
            continue
        for ty in range(by0 // TILE, (by1 - 1) // TILE + 1):
            for tx in range(bx0 // TILE, (bx1 - 1) // TILE + 1):
                bins[ty * ntx + tx].append(i)
    return ntx, nty, bins


def _render(prepared, width, height, background, threads, with_curves, with_tape):
    background = np.asarray(background, dtype=float)
    ntx, nty, bins = _bin_tiles(prepared, width, height)
    image = np.zeros((height, width, 3))
    t_final = np.zeros((height, width))
    tiles: List[Optional[TileTape]] = [None] * (ntx * nty)

    def run(ti):
        ty, tx = divmod(ti, ntx)
        x0, y0 = tx * TILE, ty * TILE
        w = min(TILE, width - x0)
        h = min(TILE, height - y0)
        img, tf, contribs = _blend_tile(
            prepared, bins[ti], x0, y0, w, h, background, with_curves, with_tape
        )
        image[y0 : y0 + h, x0 : x0 + w] = img
        t_final[y0 : y0 + h, x0 : x0 + w] = tf
        tiles[ti] = TileTape(x0=x0, y0=y0, w=w, h=h, contribs=contribs)

    nthreads = thread_count(threads)
    if nthreads == 1:
        for ti in range(ntx * nty):
            run(ti)
    else:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            list(pool.map(run, range(ntx * nty)))
    return image, t_final, tiles


def render(prepared, width: int, height: int, background=(0.0, 0.0, 0.0),
           threads: Optional[int] = None) -> RenderTape:
    """Discontinuity-aware forward render with tape recording."""
    image, t_final, tiles = _render(
        prepared, width, height, background, threads, with_curves=True, with_tape=True
    )
    return RenderTape(
        width=width,
        height=height,
        background=np.asarray(background, dtype=float),
        n_prepared=len(prepared),
        image=image,
        t_final=t_final,
        tiles=tiles,
    )


def render_curve_free(prepared, width: int, height: int, background=(0.0, 0.0, 0.0),
                      threads: Optional[int] = None) -> np.ndarray:
    """Reference blend without any scissor machinery: beta = alpha * weight."""
    image, _, _ = _render(
        prepared, width, height, background, threads, with_curves=False, with_tape=False
    )
    return image


def render_plain(prepared, width: int, height: int, background=(0.0, 0.0, 0.0),
                 threads: Optional[int] = None) -> RenderTape:
    """Taped curve-free render: plain splatting with the full backward pass
    available, for baselines that must never scissor."""
    image, t_final, tiles = _render(
        prepared, width, height, background, threads, with_curves=False, with_tape=True
    )
    return RenderTape(
        width=width,
        height=height,
        background=np.asarray(background, dtype=float),
        n_prepared=len(prepared),
        image=image,
        t_final=t_final,
        tiles=tiles,
    )


def render_scene(scene: Scene, width: int, height: int, cam: Optional[Camera] = None,
                 threads: Optional[int] = None) -> RenderTape:
    prepared = prepare(scene, cam=cam, width=width, height=height)
    return render(prepared, width, height, scene.background, threads=threads)
