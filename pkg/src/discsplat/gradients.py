"""Backward pass: exact analytic gradients through the blend and the
Gaussian parameterization, plus the boundary-crossing approximation for
curve control coordinates.

The curve part never couples into center or rotation: the local frame is a
stop-gradient, so position learning is driven purely by the Gaussian term.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from concurrent.futures import ThreadPoolExecutor

from .bezier import (
    BERN_CUTOFF,
    CrossingSolutions,
    Side,
    bernstein,
    power_coeffs,
    solve_cubic_elementwise,
)
from .rasterizer import RenderTape, thread_count
from .scene import Scene, SceneMode, rot2d

# fixed work-chunk size for the batched crossing solves: chunk boundaries
# never depend on the thread count, so results merge bitwise identically
# for any level of parallelism
CURVE_CHUNK = 32768

# offset added to the nearest-crossing distance so a curve sitting exactly
# on a pixel cannot produce an unbounded gradient
EPS_CURVE = 1e-5


class SkipDecision(Enum):
    skip_optimal = "skip_optimal"
    skip_at_min = "skip_at_min"
    skip_at_max = "skip_at_max"
    proceed = "proceed"


def classify_skip(delta: float, g_sc: int) -> SkipDecision:
    """Whether a (pixel, curve) pair can make progress: the indicator is
    binary, so a push past its current bound is wasted work."""
    if delta == 0.0:
        return SkipDecision.skip_optimal
    if delta > 0.0 and g_sc == 0:
        return SkipDecision.skip_at_min
    if delta < 0.0 and g_sc == 1:
        return SkipDecision.skip_at_max
    return SkipDecision.proceed


def approx_curve_grad(crossing: CrossingSolutions, current: float, g_sc: int) -> float:
    """Finite-slope surrogate for d(indicator)/d(coordinate): linear
    interpolation toward the nearest crossing value on each available side."""
    if crossing.side == Side.empty:
        return 0.0
    want = (1.0 - g_sc) - g_sc  # target minus current indicator value
    out = 0.0
    if crossing.nearest_right is not None:
        out += want / ((crossing.nearest_right - current) + EPS_CURVE)
    if crossing.nearest_left is not None:
        out += want / ((crossing.nearest_left - current) - EPS_CURVE)
    return out


@dataclass
class GradientBuffer:
    d_centers: np.ndarray
    d_thetas: np.ndarray
    d_log_scales: np.ndarray
    d_raw_opacities: np.ndarray
    d_colors: np.ndarray
    d_c_curves: np.ndarray

    @classmethod
    def zeros(cls, scene: Scene) -> "GradientBuffer":
        return cls(
            d_centers=np.zeros_like(scene.centers),
            d_thetas=np.zeros_like(scene.rotations),
            d_log_scales=np.zeros_like(scene.log_scales),
            d_raw_opacities=np.zeros_like(scene.raw_opacities),
            d_colors=np.zeros_like(scene.colors),
            d_c_curves=np.zeros_like(scene.c_curves),
        )

    def all_finite(self) -> bool:
        return all(
            np.all(np.isfinite(a))
            for a in (
                self.d_centers,
                self.d_thetas,
                self.d_log_scales,
                self.d_raw_opacities,
                self.d_colors,
                self.d_c_curves,
            )
        )


def _blend_grads_tile(tile, contribs_colors, d_image, t_final, background):
    """Per-contributor (d_color (k,3), d_beta (k,)) for one tile.

    The back-to-front suffix at contributor i equals the per-pixel total of
    beta * t_before * color (plus the background term) minus the inclusive
    depth-ordered prefix through i, which one stable sort and one cumulative
    sum deliver for every pair at once."""
    if not tile.contribs:
        return []
    sl = np.s_[tile.y0 : tile.y0 + tile.h, tile.x0 : tile.x0 + tile.w]
    dC = d_image[sl].reshape(-1, 3)
    tf = t_final[sl].reshape(-1)
    npix = dC.shape[0]
    lens = np.array([len(c.idx) for c in tile.contribs])
    idx = np.concatenate([c.idx for c in tile.contribs])
    tb = np.concatenate([c.t_before for c in tile.contribs])
    beta = np.concatenate([c.beta for c in tile.contribs])
    colors = np.repeat(np.asarray(contribs_colors, dtype=float), lens, axis=0)
    bt = beta * tb
    dC_p = dC[idx]
    d_color = dC_p * bt[:, None]
    direct = np.sum(dC_p * colors, axis=1) * tb
    v = bt[:, None] * colors
    tot = np.empty((npix, 3))
    for ch in range(3):
        tot[:, ch] = np.bincount(idx, weights=v[:, ch], minlength=npix)
    tot += tf[:, None] * np.asarray(background, dtype=float)
    # stable sort by pixel keeps depth order within each pixel
    order = np.argsort(idx, kind="stable")
    idx_s = idx[order]
    cs = np.cumsum(v[order], axis=0)
    seg_start = np.empty(len(idx_s), dtype=bool)
    seg_start[0] = True
    seg_start[1:] = idx_s[1:] != idx_s[:-1]
    start_pos = np.nonzero(seg_start)[0]
    offsets = np.zeros((len(start_pos), 3))
    offsets[1:] = cs[start_pos[1:] - 1]
    incl = cs - offsets[np.cumsum(seg_start) - 1]
    suffix = np.empty_like(v)
    suffix[order] = tot[idx_s] - incl  # strictly-behind mass plus background
    # at beta = 1 nothing behind contributes, so the coupling term is 0
    one_minus = 1.0 - beta
    safe = np.where(one_minus > 0.0, one_minus, 1.0)
    d_beta = direct - np.sum(dC_p * suffix, axis=1) / safe
    splits = np.cumsum(lens)[:-1]
    return list(zip(np.split(d_color, splits), np.split(d_beta, splits)))


def backward_blend(tape: RenderTape, prepared, d_image: np.ndarray, threads: Optional[int] = None):
    """Reverse of the front-to-back accumulation for every tile; returns a
    list (per tile) of lists (per contributor) of (d_color, d_beta).

    Tiles are independent, so results never depend on the thread count."""
    if tape.n_prepared != len(prepared):
        raise ValueError("tape does not match the prepared splat list")
    by_sid = {ps.splat_id: ps for ps in prepared}

    def one(tile):
        colors = [by_sid[c.splat_id].color for c in tile.contribs]
        return _blend_grads_tile(tile, colors, d_image, tape.t_final, tape.background)

    nthreads = min(thread_count(threads), max(1, len(tape.tiles)))
    if nthreads == 1:
        return [one(tile) for tile in tape.tiles]
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        return list(pool.map(one, tape.tiles))


def backward_gaussian(mu2d, inv_cov, alpha, pixel, g_curves, d_beta):
    """Chain rule for one (pixel, contributor) pair.

    Returns (d_mu2d, d_inv_cov (2,2), d_raw_opacity, delta (M,)) where
    delta[k] is the loss derivative w.r.t. curve k's indicator value.
    """
    pixel = np.asarray(pixel, dtype=float)
    g_curves = np.asarray(g_curves, dtype=float)
    g = float(np.prod(g_curves))
    a, b, c = inv_cov
    dx, dy = pixel - np.asarray(mu2d, dtype=float)
    m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    w = np.exp(-0.5 * m)
    d_alpha = d_beta * g * w
    d_raw_opacity = d_alpha * alpha * (1.0 - alpha)
    d_m = -0.5 * d_beta * alpha * g * w
    q = np.array([[a, b], [b, c]])
    d_mu2d = d_m * (-2.0) * (q @ np.array([dx, dy]))
    d_inv_cov = d_m * np.outer([dx, dy], [dx, dy])
    # per-curve sensitivity: product of the other factors, each 0 or 1
    m_curves = len(g_curves)
    delta = np.empty(m_curves)
    for k in range(m_curves):
        others = np.prod(np.delete(g_curves, k))
        delta[k] = d_beta * alpha * w * others
    return d_mu2d, d_inv_cov, d_raw_opacity, delta


def _curve_chunk(a, qc, pxo, pxq, drive):
    """Crossing solves and surrogate slopes for one slice of (splat, curve,
    axis, pixel) quadruples; returns dphi (len, 4) per control coordinate.

    drive carries both the blend sensitivity and the interpolation target:
    -delta when pushing a kept pixel toward a cut, +delta when pulling a cut
    pixel back."""
    roots, valid = solve_cubic_elementwise(a[:, 3], a[:, 2], a[:, 1], a[:, 0] - pxo)
    tt = np.where(valid, roots, 0.0)
    bern = bernstein(tt)  # (len, 3, 4)
    q_at = ((qc[:, 3, None] * tt + qc[:, 2, None]) * tt + qc[:, 1, None]) * tt + qc[:, 0, None]
    num = pxq[:, None] - q_at  # (len, 3)
    ok = valid[:, :, None] & (np.abs(bern) >= BERN_CUTOFF)
    with np.errstate(divide="ignore", invalid="ignore"):
        phis = np.where(ok, num[:, :, None] / np.where(ok, bern, 1.0), np.nan)
        # nan compares false, so invalid slots fall through to +/-inf
        right = np.where(phis >= 0.0, phis, np.inf).min(axis=1)  # (len, 4)
        left = np.where(phis < 0.0, phis, -np.inf).max(axis=1)
    has_r = np.isfinite(right)
    has_l = np.isfinite(left)
    contrib = np.zeros_like(right)
    contrib[has_r] = 1.0 / (right[has_r] + EPS_CURVE)
    contrib[has_l] += 1.0 / (left[has_l] - EPS_CURVE)
    return drive[:, None] * contrib


def _curve_gradients(scene, by_sid, sid_px, px, delta, g, cut_curve, threads=None):
    """Batched solves for every proceeding (splat, curve, axis, pixel)
    quadruple; returns image-plane control-point gradients keyed like
    scene.c_curves.

    Work is split into fixed-size chunks and merged in chunk order, so the
    result never depends on the thread count."""
    M = scene.M
    d_ctrl = np.zeros((scene.n, 4 * M, 2))
    # a kept pixel proceeds only toward a cut (needs delta > 0), a cut pixel
    # only toward restoration (delta < 0); everything else is a skip
    keep1 = (g > 0.0) & (delta > 0.0)
    keep0 = (g == 0.0) & (delta < 0.0)
    n1 = int(keep1.sum())
    n0 = int(keep0.sum())
    if n1 + n0 == 0:
        return d_ctrl
    # kept pairs touch every curve (the other factors are all 1); cut pairs
    # touch only the single curve that cut them
    sid_r = np.concatenate([np.repeat(sid_px[keep1], M), sid_px[keep0]])
    px_r = np.concatenate([np.repeat(px[keep1], M, axis=0), px[keep0]])
    curve_r = np.concatenate([np.tile(np.arange(M), n1), cut_curve[keep0]])
    drive_r = np.concatenate([np.repeat(-delta[keep1], M), delta[keep0]])
    key = sid_r * M + curve_r
    order = np.argsort(key, kind="stable")
    key, px_r, drive_r = key[order], px_r[order], drive_r[order]

    cols = {k: [] for k in ("a", "qc", "pxo", "pxq", "drive", "sid", "curve", "axis")}
    uniq, starts = np.unique(key, return_index=True)
    bounds = np.append(starts, len(key))
    co_cache = {}
    for kk, lo, hi in zip(uniq, bounds[:-1], bounds[1:]):
        sid, k = divmod(int(kk), M)
        if sid not in co_cache:
            co = power_coeffs(by_sid[sid].control_points.reshape(M, 4, 2))  # (M, 4, 2)
            # per (curve, axis) coefficient rows: queried axis q and other axis
            co_cache[sid] = (
                co[:, :, ::-1].transpose(0, 2, 1),  # (M, 2, 4): other-axis c0..c3
                co.transpose(0, 2, 1),  # (M, 2, 4): query-axis c0..c3
            )
        oth, qry = co_cache[sid]
        pixels = px_r[lo:hi]
        K = hi - lo
        cols["a"].append(np.repeat(oth[k], K, axis=0))
        cols["qc"].append(np.repeat(qry[k], K, axis=0))
        cols["pxo"].append(np.concatenate([pixels[:, 1], pixels[:, 0]]))
        cols["pxq"].append(np.concatenate([pixels[:, 0], pixels[:, 1]]))
        cols["drive"].append(np.tile(drive_r[lo:hi], 2))
        cols["sid"].append(np.full(2 * K, sid, dtype=int))
        cols["curve"].append(np.full(2 * K, k, dtype=int))
        cols["axis"].append(np.repeat(np.array([0, 1]), K))
    a = np.concatenate(cols["a"])  # (E, 4) other-axis power coefficients c0..c3
    qc = np.concatenate(cols["qc"])  # (E, 4) query-axis power coefficients
    pxo = np.concatenate(cols["pxo"])
    pxq = np.concatenate(cols["pxq"])
    drive_e = np.concatenate(cols["drive"])
    sid_e = np.concatenate(cols["sid"])
    curve_e = np.concatenate(cols["curve"])
    axis_e = np.concatenate(cols["axis"])

    total = len(drive_e)
    slices = [slice(lo, min(lo + CURVE_CHUNK, total)) for lo in range(0, total, CURVE_CHUNK)]

    def one(sl):
        return _curve_chunk(a[sl], qc[sl], pxo[sl], pxq[sl], drive_e[sl])

    nthreads = min(thread_count(threads), len(slices))
    if nthreads == 1:
        parts = [one(sl) for sl in slices]
    else:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            parts = list(pool.map(one, slices))
    for sl, dphi in zip(slices, parts):
        rows = 4 * curve_e[sl, None] + np.arange(4)[None, :]
        np.add.at(d_ctrl, (sid_e[sl, None], rows, axis_e[sl, None]), dphi)
    return d_ctrl


def backward(
    tape: RenderTape,
    prepared,
    scene: Scene,
    d_image: np.ndarray,
    threads: Optional[int] = None,
    curve_grads: bool = True,
) -> GradientBuffer:
    """Full reverse pass over a flat2d render tape.

    curve_grads=False skips the boundary-crossing solves (d_c_curves stays
    zero), for runs where the curve coordinates are frozen anyway."""
    if scene.mode != SceneMode.flat2d:
        raise ValueError("gradients are only defined in flat2d mode")
    if tape.n_prepared != len(prepared):
        raise ValueError("tape does not match the prepared splat list")
    buf = GradientBuffer.zeros(scene)
    by_sid = {ps.splat_id: ps for ps in prepared}
    n = scene.n
    mu_arr = np.zeros((n, 2))
    inv_arr = np.zeros((n, 3))
    alpha_arr = np.zeros(n)
    for ps in prepared:
        mu_arr[ps.splat_id] = ps.mu2d
        inv_arr[ps.splat_id] = ps.inv_cov
        alpha_arr[ps.splat_id] = ps.alpha

    # flatten every taped (pixel, contributor) pair into one array pass;
    # concatenation follows (tile, contributor, pixel) order, fixed by the
    # tape itself, so accumulation order never depends on the thread count
    blend = backward_blend(tape, prepared, d_image, threads=threads)
    sid_l, pxx_l, pxy_l, w_l, g_l, cut_l, dbeta_l, dcol_l = [], [], [], [], [], [], [], []
    for tile, tile_grads in zip(tape.tiles, blend):
        for c, (d_color, d_beta) in zip(tile.contribs, tile_grads):
            sid_l.append(np.full(len(c.idx), c.splat_id, dtype=int))
            pxx_l.append(tile.x0 + (c.idx % tile.w) + 0.5)
            pxy_l.append(tile.y0 + (c.idx // tile.w) + 0.5)
            w_l.append(c.weight)
            g_l.append(c.g)
            cut_l.append(
                c.cut_curve if c.cut_curve is not None else np.full(len(c.idx), -1)
            )
            dbeta_l.append(d_beta)
            dcol_l.append(d_color)
    if sid_l:
        sid = np.concatenate(sid_l)
        pxx = np.concatenate(pxx_l)
        pxy = np.concatenate(pxy_l)
        w = np.concatenate(w_l)
        g = np.concatenate(g_l)
        cutk = np.concatenate(cut_l)
        d_beta = np.concatenate(dbeta_l)
        d_color = np.concatenate(dcol_l)
    else:
        sid = np.zeros(0, dtype=int)
        cutk = np.zeros(0, dtype=int)
        pxx = pxy = w = g = d_beta = np.zeros(0)
        d_color = np.zeros((0, 3))

    al = alpha_arr[sid]
    a_, b_, c_ = inv_arr[sid].T
    dvx = pxx - mu_arr[sid, 0]
    dvy = pxy - mu_arr[sid, 1]
    d_alpha = d_beta * g * w
    d_m = -0.5 * d_beta * al * g * w
    qdx = a_ * dvx + b_ * dvy
    qdy = b_ * dvx + c_ * dvy

    def acc(weights):
        return np.bincount(sid, weights=weights, minlength=n)

    buf.d_centers[:, 0] = acc(-2.0 * d_m * qdx)
    buf.d_centers[:, 1] = acc(-2.0 * d_m * qdy)
    gq = np.zeros((n, 2, 2))  # accumulated inverse-covariance grads
    gq[:, 0, 0] = acc(d_m * dvx * dvx)
    gq[:, 0, 1] = gq[:, 1, 0] = acc(d_m * dvx * dvy)
    gq[:, 1, 1] = acc(d_m * dvy * dvy)
    buf.d_raw_opacities[:] = acc(d_alpha * al * (1.0 - al))
    for ch in range(3):
        buf.d_colors[:, ch] = acc(d_color[:, ch])

    # chain inverse-covariance gradients to theta / log_scales, per splat
    touched = np.unique(sid)
    for s in touched:
        a, b, cc = inv_arr[s]
        q = np.array([[a, b], [b, cc]])
        g_sigma = -q @ gq[s] @ q
        th = float(scene.rotations[s])
        r = rot2d(th)
        dr = np.array([[-np.sin(th), -np.cos(th)], [np.cos(th), -np.sin(th)]])
        s2 = np.exp(2.0 * scene.log_scales[s])
        d = np.diag(s2)
        d_sigma_d_theta = dr @ d @ r.T + r @ d @ dr.T
        buf.d_thetas[s] = np.sum(g_sigma * d_sigma_d_theta)
        for i in range(2):
            e = np.zeros((2, 2))
            e[i, i] = 2.0 * s2[i]
            buf.d_log_scales[s, i] = np.sum(g_sigma * (r @ e @ r.T))

    if curve_grads:
        # delta = dL/dg per curve: the product over the other curves' factors
        # is 1 both for kept pixels and for taped single-cut pixels
        delta = d_beta * al * w
        px = np.stack([pxx, pxy], axis=-1)
        d_ctrl = _curve_gradients(scene, by_sid, sid, px, delta, g, cutk, threads=threads)
        # pull image-plane control gradients back through the local frame;
        # stop-gradient at the frame itself (no coupling into center/theta)
        for s in touched:
            r = rot2d(float(scene.rotations[s]))
            buf.d_c_curves[s] = d_ctrl[s] @ r
    return buf
