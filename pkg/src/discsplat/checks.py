"""On-demand verification harnesses behind the CLI check commands.

Each harness re-verifies one numerical contract against an independent
oracle (companion eigenvalues + bisection for the cubic solver, parametric
sampling for implicitization, substitution for crossings, central finite
differences for gradients) and returns a small pass/fail table.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .bezier import (
    bernstein,
    crossing_solutions,
    implicitize_batch,
    power_coeffs,
    solve_cubic_real,
)
from .gradients import backward
from .rasterizer import prepare, render
from .scene import init_scene


@dataclass
class CheckRow:
    name: str
    value: float
    bound: float
    ok: bool


@dataclass
class CheckReport:
    title: str
    rows: List[CheckRow] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    def table(self) -> str:
        width = max(24, *(len(r.name) for r in self.rows)) if self.rows else 24
        lines = [f"{self.title}  ({self.seconds:.2f} s)"]
        for r in self.rows:
            status = "PASS" if r.ok else "FAIL"
            lines.append(f"  {r.name:<{width}}  {r.value:>12.3e}  <= {r.bound:<9.0e} {status}")
        lines.append(f"  overall: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines)


def implicit_check(n_curves: int = 1000, n_samples: int = 200, seed: int = 0) -> CheckReport:
    """Max normalized implicit residual along n_samples parametric points of
    n_curves random desk-scale curves."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 100.0, size=(n_curves, 4, 2))
    gamma, line, is_line, ok = implicitize_batch(pts)
    ts = np.linspace(-2.0, 3.0, n_samples)
    co = power_coeffs(pts)  # (n, 4, 2)
    t = ts[None, :, None]
    xy = ((co[:, None, 3] * t + co[:, None, 2]) * t + co[:, None, 1]) * t + co[:, None, 0]
    x, y = xy[..., 0], xy[..., 1]
    mono = np.stack(
        [x * x * x, x * x * y, x * y * y, y * y * y, x * x, x * y, y * y, x, y, np.ones_like(x)]
    )  # (10, n, samples)
    res = np.abs(np.einsum("ng,gns->ns", gamma, mono))
    cubic_rows = ~is_line & ok
    worst = float(res[cubic_rows].max()) if cubic_rows.any() else 0.0
    report = CheckReport("implicitization residual", seconds=time.perf_counter() - t0)
    report.rows.append(CheckRow("max |B_imp(B(t))|", worst, 1e-6, worst <= 1e-6))
    report.rows.append(
        CheckRow("degenerate fraction", float(np.mean(~cubic_rows)), 1e-3, np.mean(~cubic_rows) <= 1e-3)
    )
    report.seconds = time.perf_counter() - t0
    return report


def _poly(a3, a2, a1, a0, x):
    return ((a3 * x + a2) * x + a1) * x + a0


def _oracle_roots(co: np.ndarray):
    """Real roots per coefficient row via companion eigenvalues plus Newton
    polish; nan-padded (n, 3).  No code shared with the module solver."""
    n = len(co)
    a3, a2, a1, a0 = (co[:, i] for i in range(4))
    scale = np.abs(co).max(axis=1)
    cut = 1e-12 * scale
    cub = np.abs(a3) > cut
    qua = ~cub & (np.abs(a2) > cut)
    lin = ~cub & ~qua & (np.abs(a1) > cut)
    cand = np.full((n, 3), np.nan + 0j, dtype=complex)
    with np.errstate(all="ignore"):
        if cub.any():
            m = int(cub.sum())
            comp = np.zeros((m, 3, 3))
            comp[:, 1, 0] = comp[:, 2, 1] = 1.0
            comp[:, 0, :] = -co[cub, 1:] / co[cub, 0:1]
            cand[cub] = np.linalg.eigvals(comp)
        if qua.any():
            m = int(qua.sum())
            comp = np.zeros((m, 2, 2))
            comp[:, 1, 0] = 1.0
            comp[:, 0, 0] = -a1[qua] / a2[qua]
            comp[:, 0, 1] = -a0[qua] / a2[qua]
            cand[qua, :2] = np.linalg.eigvals(comp)
        if lin.any():
            cand[lin, 0] = -a0[lin] / a1[lin]
        near_real = np.abs(cand.imag) < 1e-6 * np.maximum(1.0, np.abs(cand.real))
        x = np.where(near_real, cand.real, np.nan)
        # Newton polish against the full quartet of coefficients
        c3, c2, c1, c0 = (np.broadcast_to(v[:, None], x.shape) for v in (a3, a2, a1, a0))
        for _ in range(60):
            f = _poly(c3, c2, c1, c0, x)
            df = (3.0 * c3 * x + 2.0 * c2) * x + c1
            step = f / df
            good = np.isfinite(step)
            x = np.where(good, x - step, x)
        resid = np.abs(_poly(c3, c2, c1, c0, x))
        accept = near_real & (resid <= 1e-7 * np.maximum(1.0, scale[:, None]))
    x = np.where(accept, x, np.nan)
    x = np.sort(x, axis=1)  # nan sorts last
    # dedup clusters tighter than the oracle's resolution
    dup = np.zeros_like(x, dtype=bool)
    dup[:, 1:] = (x[:, 1:] - x[:, :-1]) <= 1e-7
    return np.where(dup, np.nan, x)


def _classify_crossings(co: np.ndarray, roots: np.ndarray):
    """Split oracle roots into certified sign-change crossings (bisected to
    their final location) and tolerance-ambiguous touching roots."""
    a3, a2, a1, a0 = (co[:, i : i + 1] for i in range(4))
    h = 1e-5 * np.maximum(1.0, np.abs(roots))
    with np.errstate(all="ignore"):
        s_lo = np.sign(_poly(a3, a2, a1, a0, roots - h))
        s_hi = np.sign(_poly(a3, a2, a1, a0, roots + h))
        crossing = np.isfinite(roots) & (s_lo * s_hi < 0)
        # two crossings closer than the classification width are float noise
        # around a near-double root, not two certified crossings
        for i in range(3):
            for j in range(3):
                if i == j:
                    continue
                close = (
                    crossing[:, i]
                    & np.isfinite(roots[:, j])
                    & (np.abs(roots[:, i] - roots[:, j]) <= 2e-5 * np.maximum(1.0, np.abs(roots[:, i])))
                )
                crossing[close, i] = False
        # certify the location independently of Newton: bisect the bracket
        lo = np.where(crossing, roots - h, 0.0)
        hi = np.where(crossing, roots + h, 1.0)
        f_lo = _poly(a3, a2, a1, a0, lo)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            fm = _poly(a3, a2, a1, a0, mid)
            go_hi = np.sign(fm) == np.sign(f_lo)
            lo = np.where(go_hi, mid, lo)
            f_lo = np.where(go_hi, fm, f_lo)
            hi = np.where(go_hi, hi, mid)
    certified = np.where(crossing, 0.5 * (lo + hi), np.nan)
    return certified


def solver_check(n_draws: int = 100_000, seed: int = 0) -> CheckReport:
    """Module cubic solver vs the companion+bisection oracle: no spurious
    and no missed certified-crossing real roots at 1e-7."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    co = rng.normal(size=(n_draws, 4)) * 10.0 ** rng.integers(-3, 4, size=(n_draws, 1))
    got = np.full((n_draws, 3), np.nan)
    for i, (a3, a2, a1, a0) in enumerate(co):
        rts = solve_cubic_real(a3, a2, a1, a0).roots
        got[i, : len(rts)] = rts

    a3, a2, a1, a0 = (co[:, i : i + 1] for i in range(4))
    scale = np.abs(co).max(axis=1)[:, None]
    # spurious: a reported root must vanish to 1e-7 of the evaluation
    # conditioning (large roots make individual terms dwarf the coefficients)
    with np.errstate(all="ignore"):
        cond = np.maximum(scale, 1.0) + 0.0 * got
        for term in (a3 * got ** 3, a2 * got ** 2, a1 * got):
            cond = np.maximum(cond, np.abs(term))
        resid = np.abs(_poly(a3, a2, a1, a0, got))
        spurious = int(np.sum(np.isfinite(got) & (resid > 1e-7 * cond)))

    oracle = _oracle_roots(co)
    certified = _classify_crossings(co, oracle)
    # missed: a certified crossing must have a solver root within the float
    # noise plateau around it (lowest-order derivative that clears the floor)
    with np.errstate(all="ignore"):
        w = certified
        noise = np.ones_like(w)
        for term in (a3 * w ** 3, a2 * w * w, a1 * w, a0 + 0.0 * w):
            noise = np.maximum(noise, np.abs(term))
        noise *= 1e-13
        d1 = np.abs((3 * a3 * w + 2 * a2) * w + a1)
        d2 = np.abs(6 * a3 * w + 2 * a2)
        widths = np.full_like(w, np.inf)
        widths = np.where(d1 > 0, noise / d1, widths)
        widths = np.minimum(widths, np.where(d2 > 0, np.sqrt(2 * noise / d2), np.inf))
        widths = np.minimum(widths, np.where(np.abs(a3) > 0, np.cbrt(noise) / np.cbrt(np.abs(a3)), np.inf))
        tol_w = 1e-6 * np.maximum(1.0, np.abs(w)) + widths
        got_f = np.where(np.isfinite(got), got, np.inf)
        gap = np.min(np.abs(w[:, :, None] - got_f[:, None, :]), axis=2)
        missed = int(np.sum(np.isfinite(w) & ~(gap <= tol_w)))

    report = CheckReport("cubic solver vs companion+bisection oracle")
    report.rows.append(CheckRow("spurious roots", float(spurious), 0, spurious == 0))
    report.rows.append(CheckRow("missed crossing roots", float(missed), 0, missed == 0))
    report.seconds = time.perf_counter() - t0
    return report


def crossing_check(n_queries: int = 10_000, seed: int = 0) -> CheckReport:
    """Soundness of the crossing solver: substituting any returned value
    must yield a curve passing within 1e-5 px of the query pixel, verified
    at parameters found by an independent eigenvalue root finder."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    mods, pixels, others = [], [], []
    worked_ok = False
    twisted = np.array([[0, 0], [1 / 3, 0], [2 / 3, 0], [1, 1]], dtype=float)
    cs = crossing_solutions(twisted, 0, 0, "x", (2.0, 0.125))
    worked_ok = len(cs.values) == 1 and abs(cs.values[0] - 12.0) <= 1e-9

    for _ in range(n_queries):
        ctrl = rng.uniform(0.0, 32.0, size=(4, 2))
        px = rng.uniform(0.0, 32.0, size=2)
        axis_i = int(rng.integers(0, 2))
        pi = int(rng.integers(0, 4))
        cs = crossing_solutions(ctrl, 0, pi, "xy"[axis_i], px)
        for phi in cs.values:
            mod = ctrl.copy()
            mod[pi, axis_i] = phi
            mods.append(mod)
            pixels.append(px)
            others.append(1 - axis_i)
    mods = np.asarray(mods)
    pixels = np.asarray(pixels)
    others = np.asarray(others)

    co = power_coeffs(mods)  # (E, 4, 2)
    oc = np.take_along_axis(co, others[:, None, None], axis=2)[:, :, 0]  # (E, 4)
    oc = oc[:, ::-1].copy()  # to (c3, c2, c1, c0)
    oc[:, 3] -= pixels[np.arange(len(mods)), others]
    roots = _oracle_roots(oc)
    tt = np.where(np.isfinite(roots), roots, 0.0)

    def curve_at(t):
        return ((co[:, None, 3] * t[:, :, None] + co[:, None, 2]) * t[:, :, None]
                + co[:, None, 1]) * t[:, :, None] + co[:, None, 0]  # (E, 3, 2)

    # the substituted coordinate can be huge, making the curve so steep that
    # a last-bit parameter error shows up as a large point distance; a short
    # Gauss-Newton descent on the distance itself recovers the witness
    for _ in range(40):
        r = curve_at(tt) - pixels[:, None, :]
        jac = (3.0 * co[:, None, 3] * tt[:, :, None] + 2.0 * co[:, None, 2]) * tt[
            :, :, None
        ] + co[:, None, 1]
        num = np.sum(r * jac, axis=2)
        den = np.sum(jac * jac, axis=2)
        tt = tt - num / np.where(den > 0.0, den, 1.0)
    dist = np.linalg.norm(curve_at(tt) - pixels[:, None, :], axis=2)
    dist = np.where(np.isfinite(roots), dist, np.inf)
    worst = float(dist.min(axis=1).max())

    report = CheckReport("crossing-solver soundness")
    report.rows.append(CheckRow("max substituted distance", worst, 1e-5, worst <= 1e-5))
    report.rows.append(CheckRow("worked example S={12}", 0.0 if worked_ok else 1.0, 0, worked_ok))
    report.seconds = time.perf_counter() - t0
    return report


def _tape_signature(tape):
    sig = []
    for tile in tape.tiles:
        for c in tile.contribs:
            sig.append((c.splat_id, tuple(c.idx.tolist()), tuple(c.g.tolist())))
    return sig


GRAD_GROUPS = ("centers", "rotations", "log_scales", "raw_opacities", "colors")


def grad_check(
    n_scenes: int = 100,
    seed: int = 0,
    size: int = 32,
    max_splats: int = 8,
    tol: float = 1e-4,
    min_checks: int = 12,
) -> CheckReport:
    """Analytic continuous-parameter gradients vs central finite differences
    on random small scenes; perturbations with an unstable taped set (a
    contributor or indicator flip) are screened out and retried."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in GRAD_GROUPS}
    counts = {k: 0 for k in GRAD_GROUPS}
    grad_attr = {
        "centers": "d_centers",
        "rotations": "d_thetas",
        "log_scales": "d_log_scales",
        "raw_opacities": "d_raw_opacities",
        "colors": "d_colors",
    }
    scene_seed = seed * 100_000
    scenes_done = 0
    while scenes_done < n_scenes:
        scene_seed += 1
        n = int(rng.integers(2, max_splats + 1))
        sc = init_scene(size, size, n, 2, seed=scene_seed)
        target = rng.uniform(0.0, 1.0, size=(size, size, 3))
        prepared = prepare(sc, width=size, height=size)
        tape = render(prepared, size, size)
        diff = tape.image - target
        buf = backward(tape, prepared, sc, diff)
        base_sig = _tape_signature(tape)
        for name in GRAD_GROUPS:
            arr = getattr(sc, name)
            flat_i = int(rng.integers(0, arr.size))
            h = 1e-4
            losses, sigs = [], []
            for s in (+h, -h):
                mod = init_scene(size, size, n, 2, seed=scene_seed)
                getattr(mod, name).reshape(-1)[flat_i] += s
                tp = render(prepare(mod, width=size, height=size), size, size)
                losses.append(0.5 * np.sum((tp.image - target) ** 2))
                sigs.append(_tape_signature(tp))
            if sigs[0] != sigs[1] or sigs[0] != base_sig:
                continue
            fd = (losses[0] - losses[1]) / (2 * h)
            got = getattr(buf, grad_attr[name]).reshape(-1)[flat_i]
            rel = abs(got - fd) / max(abs(fd), 1e-7 / tol)
            worst[name] = max(worst[name], rel)
            counts[name] += 1
        scenes_done += 1

    report = CheckReport("continuous gradients vs finite differences")
    for name in GRAD_GROUPS:
        enough = counts[name] >= min_checks
        report.rows.append(CheckRow(f"{name} max rel err ({counts[name]} checks)", worst[name], tol, worst[name] <= tol and enough))
    report.seconds = time.perf_counter() - t0
    return report
