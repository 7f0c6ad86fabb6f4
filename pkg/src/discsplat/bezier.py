"""Cubic Bezier curves: evaluation, implicitization, side tests, and the
coordinate-crossing solver used by the boundary gradient approximation.

All functions here are pure and operate on plain numpy arrays, so they are
safe to call from any number of threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import math

import numpy as np

# Relative magnitude below which a leading polynomial coefficient is treated
# as zero when choosing the solver degree.
LEADING_CUTOFF = 1e-12
# Roots closer than this are merged into one.
ROOT_DEDUP = 1e-9
# Bernstein weights below this make the crossing value diverge; discard.
BERN_CUTOFF = 1e-8
# Chord-relative distance below which a curve is treated as a straight line.
COLLINEAR_CUTOFF = 1e-6
# Relative magnitude below which a power-basis coefficient is treated as zero
# when picking the implicitization degree.
DEGREE_CUTOFF = 1e-10


class DegenerateCurveError(ValueError):
    """All four control points coincide; the curve has no direction."""


@dataclass(frozen=True)
class CubicBezier:
    """Four ordered control points, each a 2-vector in pixels."""

    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray

    def __post_init__(self):
        for name in ("p0", "p1", "p2", "p3"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not all(np.all(np.isfinite(getattr(self, n))) for n in ("p0", "p1", "p2", "p3")):
            raise ValueError("control points must be finite")

    @property
    def points(self) -> np.ndarray:
        return np.stack([self.p0, self.p1, self.p2, self.p3])


@dataclass(frozen=True)
class ImplicitCubic:
    """Ten bivariate-cubic coefficients, or a signed-line fallback.

    gamma is ordered (xxx, xxy, xyy, yyy, xx, xy, yy, x, y, 0) and is
    normalized so its max absolute entry is 1.  degenerate_line holds
    (a, b, c) of a*x + b*y + c when the source curve is (near-)collinear;
    gamma is unused in that case.
    """

    gamma: np.ndarray
    degenerate_line: Optional[np.ndarray] = None

    def evaluate(self, x, y):
        """Evaluate the implicit form at (x, y); broadcasts over arrays."""
        if self.degenerate_line is not None:
            a, b, c = self.degenerate_line
            return a * x + b * y + c
        return eval_implicit(self.gamma, x, y)


class Degeneracy(Enum):
    cubic = "cubic"
    quadratic = "quadratic"
    linear = "linear"
    constant = "constant"


@dataclass(frozen=True)
class CubicRoots:
    roots: tuple
    degeneracy: Degeneracy
    identically_zero: bool = False


class Side(Enum):
    empty = "empty"
    single_left = "single_left"
    single_right = "single_right"
    both_sides = "both_sides"


@dataclass(frozen=True)
class CrossingSolutions:
    values: tuple
    side: Side
    nearest_left: Optional[float] = None
    nearest_right: Optional[float] = None


def eval_bezier(curve: CubicBezier, t):
    """B(t) for scalar or array t; t is not restricted to [0, 1]."""
    t = np.asarray(t, dtype=float)
    u = 1.0 - t
    w = np.stack([u ** 3, 3.0 * u ** 2 * t, 3.0 * u * t ** 2, t ** 3], axis=-1)
    return w @ curve.points


def power_coeffs(points: np.ndarray) -> np.ndarray:
    """Power-basis coefficients of the Bezier: rows (c0, c1, c2, c3) so that
    B(t) = c0 + c1 t + c2 t^2 + c3 t^3 per coordinate.

    points has shape (..., 4, d); result has shape (..., 4, d).
    """
    p0 = points[..., 0, :]
    p1 = points[..., 1, :]
    p2 = points[..., 2, :]
    p3 = points[..., 3, :]
    c0 = p0
    c1 = 3.0 * (p1 - p0)
    c2 = 3.0 * (p2 - 2.0 * p1 + p0)
    c3 = p3 - 3.0 * p2 + 3.0 * p1 - p0
    return np.stack([c0, c1, c2, c3], axis=-2)


def eval_implicit(gamma: np.ndarray, x, y):
    """Evaluate sum of gamma-weighted monomials; broadcasts over x, y."""
    g = gamma
    return (
        g[0] * x ** 3 + g[1] * x ** 2 * y + g[2] * x * y ** 2 + g[3] * y ** 3
        + g[4] * x ** 2 + g[5] * x * y + g[6] * y ** 2
        + g[7] * x + g[8] * y + g[9]
    )


# --- implicitization -------------------------------------------------------
#
# The implicit form is the resultant of x - x(t) and y - y(t) eliminated in t,
# computed as the determinant of the Bezout matrix.  With P(t) = x(t) - x and
# Q(t) = y(t) - y, the bracket [i, j] = p_i q_j - p_j q_i is affine in (x, y)
# when one index is 0 and constant otherwise, so the determinant expands into
# closed-form polynomials of the eight control coordinates.

def _affine_mul(l1, l2):
    """Product of two affine forms (gx, gy, c) -> quadratic
    (xx, xy, yy, x, y, 0).  Inputs are (..., 3) stacks."""
    g1x, g1y, c1 = l1[..., 0], l1[..., 1], l1[..., 2]
    g2x, g2y, c2 = l2[..., 0], l2[..., 1], l2[..., 2]
    return np.stack(
        [
            g1x * g2x,
            g1x * g2y + g1y * g2x,
            g1y * g2y,
            g1x * c2 + c1 * g2x,
            g1y * c2 + c1 * g2y,
            c1 * c2,
        ],
        axis=-1,
    )


def _quad_affine_mul(q, l):
    """Quadratic (..., 6) times affine (..., 3) -> cubic (..., 10) in the
    gamma ordering."""
    qxx, qxy, qyy, qx, qy, q0 = (q[..., i] for i in range(6))
    gx, gy, c = l[..., 0], l[..., 1], l[..., 2]
    return np.stack(
        [
            qxx * gx,
            qxx * gy + qxy * gx,
            qxy * gy + qyy * gx,
            qyy * gy,
            qxx * c + qx * gx,
            qxy * c + qx * gy + qy * gx,
            qyy * c + qy * gy,
            qx * c + q0 * gx,
            qy * c + q0 * gy,
            q0 * c,
        ],
        axis=-1,
    )


def _quad_to_cubic(q):
    out = np.zeros(q.shape[:-1] + (10,))
    out[..., 4:] = q
    return out


def _affine_to_cubic(l):
    out = np.zeros(l.shape[:-1] + (10,))
    out[..., 7:] = l
    return out


def _chord_line(points: np.ndarray):
    """Signed line through the chord p0 -> p3 (left side positive).

    points: (n, 4, 2).  Returns (line (n, 3), ok (n,)) where ok is False when
    all four control points coincide.
    """
    p0 = points[:, 0]
    p3 = points[:, 3]
    d = p3 - p0
    chord = np.linalg.norm(d, axis=1)
    # Zero-length chord: steer along the farthest interior point instead.
    spread = points - p0[:, None, :]
    far = np.argmax(np.linalg.norm(spread, axis=2), axis=1)
    alt = spread[np.arange(len(points)), far]
    alt_len = np.linalg.norm(alt, axis=1)
    use_alt = chord <= 1e-12 * np.maximum(1.0, alt_len)
    d = np.where(use_alt[:, None], alt, d)
    ok = np.linalg.norm(d, axis=1) > 0
    n = np.stack([-d[:, 1], d[:, 0]], axis=1)
    c = -(n * p0).sum(axis=1)
    line = np.concatenate([n, c[:, None]], axis=1)
    norm = np.max(np.abs(line), axis=1)
    norm = np.where(norm > 0, norm, 1.0)
    return line / norm[:, None], ok


def implicitize_batch(points: np.ndarray):
    """Implicitize n curves at once.

    points: (n, 4, 2) control points.
    Returns (gamma (n, 10), line (n, 3), is_line (n,), ok (n,)).
    Rows with is_line use the signed-line fallback; rows with ok False have
    all four control points coincident.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    coeffs = power_coeffs(points)  # (n, 4, 2)
    a = coeffs[..., 0]  # x(t) power coeffs (n, 4)
    b = coeffs[..., 1]

    # Affine brackets [i, 0] = (b_i, -a_i, a_i b0 - a0 b_i).
    def bracket0(i):
        return np.stack([b[:, i], -a[:, i], a[:, i] * b[:, 0] - a[:, 0] * b[:, i]], axis=1)

    A = bracket0(1)
    B = bracket0(2)
    C = bracket0(3)
    k21 = a[:, 2] * b[:, 1] - a[:, 1] * b[:, 2]
    k31 = a[:, 3] * b[:, 1] - a[:, 1] * b[:, 3]
    k32 = a[:, 3] * b[:, 2] - a[:, 2] * b[:, 3]

    # det of the 3x3 Bezout matrix [[A, B, C], [B, k21 + C, k31], [C, k31, k32]]
    # expanded as A(k21*k32 - k31^2) + k32*(AC - B^2) + 2*k31*BC - k21*C^2 - C^3.
    AC = _affine_mul(A, C)
    BB = _affine_mul(B, B)
    BC = _affine_mul(B, C)
    CC = _affine_mul(C, C)
    gamma = (
        _affine_to_cubic(A * (k21 * k32 - k31 ** 2)[:, None])
        + _quad_to_cubic(k32[:, None] * (AC - BB) + 2.0 * k31[:, None] * BC - k21[:, None] * CC)
        - _quad_affine_mul(CC, C)
    )

    scale = np.max(np.abs(coeffs.reshape(n, -1)), axis=1)
    deg_cut = DEGREE_CUTOFF * np.maximum(scale, 1e-300)
    deg2 = np.maximum(np.abs(a[:, 3]), np.abs(b[:, 3])) <= deg_cut
    if np.any(deg2):
        # Leading coefficients vanish: the curve is a conic (or less); the
        # 3x3 Bezout determinant degenerates, so drop to the 2x2 form
        # det [[A, B], [B, k21]] = k21*A - B^2.
        conic = _affine_to_cubic(A * k21[:, None]) - _quad_to_cubic(_affine_mul(B, B))
        gamma = np.where(deg2[:, None], conic, gamma)

    # Collinear control points trace their chord: use the signed line.
    chord = points[:, 3] - points[:, 0]
    chord_len = np.linalg.norm(chord, axis=1)
    mid = points[:, 1:3] - points[:, 0, None, :]
    rel = mid[..., 0] * chord[:, None, 1] - mid[..., 1] * chord[:, None, 0]
    dist = np.max(np.abs(rel), axis=1) / np.maximum(chord_len, 1e-300)
    is_line = (dist <= COLLINEAR_CUTOFF * chord_len) | (chord_len == 0)

    norm = np.max(np.abs(gamma), axis=1)
    bad = norm <= 1e-300
    is_line = is_line | bad
    gamma = gamma / np.where(norm > 0, norm, 1.0)[:, None]

    line, ok = _chord_line(points)
    return gamma, line, is_line, ok


def implicitize(curve: CubicBezier) -> ImplicitCubic:
    """Implicit form of the curve; raises DegenerateCurveError when all four
    control points coincide."""
    gamma, line, is_line, ok = implicitize_batch(curve.points[None])
    if not ok[0]:
        raise DegenerateCurveError("all four control points coincide")
    if is_line[0]:
        return ImplicitCubic(gamma=np.zeros(10), degenerate_line=line[0])
    return ImplicitCubic(gamma=gamma[0])


def classify_point(imp: ImplicitCubic, p) -> int:
    """1 on the strictly positive side of the implicit form, else 0."""
    p = np.asarray(p, dtype=float)
    return int(imp.evaluate(p[0], p[1]) > 0.0)


def indicator(imps, p) -> int:
    """Product of classify_point over all curves: 0 as soon as any curve
    scissors the point."""
    out = 1
    for imp in imps:
        out *= classify_point(imp, p)
        if out == 0:
            return 0
    return out


# --- real-root cubic solving ----------------------------------------------

def _polish(roots, c3, c2, c1, c0, iters=3):
    """Newton steps on the full polynomial; vectorized, stops when every
    iterate's relative step is at float precision.  Coefficients may be
    arrays matching the candidate shape."""
    r = np.asarray(roots, dtype=float)
    for _ in range(iters):
        f = ((c3 * r + c2) * r + c1) * r + c0
        df = (3.0 * c3 * r + 2.0 * c2) * r + c1
        step = np.where(np.abs(df) > 0, f / np.where(df == 0, 1.0, df), 0.0)
        r = r - step
        if np.all(np.abs(step) <= 1e-15 * np.abs(r)):
            break
    return r


def _bracketed_cubic_root(b, c, d, bound):
    """One real root of the monic cubic t^3 + b t^2 + c t + d via Newton
    safeguarded by bisection on [-bound, bound]."""

    def f(t):
        return ((t + b) * t + c) * t + d

    lo, hi = -bound, bound
    flo = f(lo)
    x = 0.0
    for _ in range(200):
        fx = f(x)
        if fx == 0.0:
            return x
        if (fx < 0) == (flo < 0):
            lo = x
        else:
            hi = x
        df = (3.0 * x + 2.0 * b) * x + c
        step_ok = df != 0.0
        if step_ok:
            nx = x - fx / df
            step_ok = lo < nx < hi
        if not step_ok:
            nx = 0.5 * (lo + hi)
        # no step-size early exit: near tiny roots the function is flat and
        # steps shrink long before convergence; the bisection safeguard makes
        # the full iteration budget cheap and collapses the bracket regardless
        if nx == x:
            break
        x = nx
    return x


def _dedup_sorted(roots, poly=None):
    """Merge root clusters; gap tolerance is relative because Newton can only
    localize a double root to ~sqrt(eps) of its magnitude.  With `poly` the
    cluster representative is the member with the smallest residual."""
    out = []
    for r in sorted(roots):
        if out and r - out[-1][-1] <= max(ROOT_DEDUP, 1e-6 * max(1.0, abs(r))):
            out[-1].append(r)
        else:
            out.append([r])
    if poly is None:
        reps = [c[0] for c in out]
    else:
        reps = [min(c, key=lambda t: abs(poly(t))) for c in out]
    # a cubic has at most three real roots; fold the tightest pair first
    while len(reps) > 3:
        gaps = [
            (reps[i + 1] - reps[i]) / max(1.0, abs(reps[i])) for i in range(len(reps) - 1)
        ]
        i = gaps.index(min(gaps))
        pair = [reps[i], reps[i + 1]]
        keep = min(pair, key=lambda t: abs(poly(t))) if poly else pair[0]
        reps[i:i + 2] = [keep]
    return reps


def _quad_candidates(q1, q0):
    """Root candidates of t^2 + q1 t + q0, tolerating overflow: when the
    discriminant exceeds float range the roots are -q1 and -q0/q1."""
    if not (math.isfinite(q1) and math.isfinite(q0)):
        return []
    disc = q1 * q1 - 4.0 * q0
    if not math.isfinite(disc):
        out = [-q1]
        if q1 != 0.0:
            out.append(-q0 / q1)
        return [t for t in out if math.isfinite(t)]
    if disc < 0.0:
        return []
    sq = math.sqrt(disc)
    top = -(q1 + math.copysign(sq, q1)) / 2.0
    if top != 0.0:
        return [top, q0 / top]
    return [-q1 / 2.0]


def _newton1(t, c3, c2, c1, c0, iters=60):
    """Scalar Newton polish with a relative-step convergence exit."""
    for _ in range(iters):
        f = ((c3 * t + c2) * t + c1) * t + c0
        df = (3.0 * c3 * t + 2.0 * c2) * t + c1
        if df == 0.0 or not math.isfinite(f) or not math.isfinite(df):
            break
        nt = t - f / df
        if not math.isfinite(nt):
            break
        if abs(nt - t) <= 1e-15 * abs(nt):
            return nt
        t = nt
    return t


def solve_cubic_real(a3: float, a2: float, a1: float, a0: float) -> CubicRoots:
    """All real roots of a3 t^3 + a2 t^2 + a1 t + a0, with graceful
    degradation when leading coefficients vanish."""
    a3, a2, a1, a0 = float(a3), float(a2), float(a1), float(a0)
    if not all(math.isfinite(v) for v in (a3, a2, a1, a0)):
        raise ValueError("coefficients must be finite")
    if a3 == a2 == a1 == a0 == 0.0:
        return CubicRoots((), Degeneracy.constant, identically_zero=True)

    # Degrade only on exactly-zero leading coefficients (or when the monic
    # normalization overflows): any finite relative threshold drops genuine
    # crossing roots near -a2/a3 that the root-completeness oracle can see.
    # Noise-level degree drops from curve geometry are screened upstream at
    # DEGREE_CUTOFF before coefficients ever reach this solver.
    if a3 != 0.0 and math.isfinite(a2 / a3) and math.isfinite(a1 / a3) and math.isfinite(a0 / a3):
        return _solve_full_cubic(a3, a2, a1, a0)

    if a2 != 0.0 and np.isfinite(a1 / a2) and np.isfinite(a0 / a2):
        disc = a1 * a1 - 4.0 * a2 * a0
        if not np.isfinite(disc):
            # rescale to dodge overflow in the discriminant
            m = max(abs(a2), abs(a1), abs(a0))
            return CubicRoots(
                solve_cubic_real(0.0, a2 / m, a1 / m, a0 / m).roots, Degeneracy.quadratic
            )
        if disc < 0.0:
            return CubicRoots((), Degeneracy.quadratic)
        sq = np.sqrt(disc)
        qq = -(a1 + np.copysign(sq, a1)) / 2.0
        if qq != 0.0:
            raw = [qq / a2, a0 / qq]
        else:
            raw = [-a1 / (2.0 * a2)]
        roots = _polish(raw, 0.0, a2, a1, a0)
        poly = lambda t: (a2 * t + a1) * t + a0
        return CubicRoots(tuple(_dedup_sorted(roots.tolist(), poly)), Degeneracy.quadratic)

    if a1 != 0.0 and np.isfinite(a0 / a1):
        return CubicRoots((-a0 / a1,), Degeneracy.linear)

    return CubicRoots((), Degeneracy.constant, identically_zero=bool(a0 == 0.0))


def _solve_full_cubic(a3, a2, a1, a0):
    b, c, d = a2 / a3, a1 / a3, a0 / a3
    # Balance via t = s*u so the monic coefficients are all <= 1 in
    # magnitude; without this, extreme spreads overflow the evaluation.
    s = max(1.0, abs(b), math.sqrt(abs(c)), abs(d) ** (1.0 / 3.0))
    bb, cc, dd = b / s, c / (s * s), d / (s * s * s)
    # A monic cubic always has a real root inside the Cauchy bound and
    # changes sign across it; find it with safeguarded Newton, then
    # deflate to a quadratic.  This stays robust when the coefficient
    # magnitudes are wildly spread (Cardano's discriminant cancels there).
    bound = 1.0 + max(abs(bb), abs(cc), abs(dd))
    r1 = _bracketed_cubic_root(bb, cc, dd, bound)
    # Deflate in both the balanced and the original monic coordinates:
    # the balanced form keeps huge roots representable but can underflow
    # the small-root structure when the spread exceeds float range, and
    # vice versa.  Forward deflation is stable when r1 is the smallest
    # root, backward when it is the largest; generate every candidate and
    # let polish + the residual filter discard the garbage.
    raw_u = [r1]
    raw_t = []
    pairs_u = [(bb + r1, cc + (bb + r1) * r1)]
    if r1 != 0.0:
        pairs_u.append(((-dd / r1 - cc) / r1, -dd / r1))
    for q1, q0 in pairs_u:
        raw_u += _quad_candidates(q1, q0)
    r1t = s * r1
    if math.isfinite(r1t):
        pairs_t = [(b + r1t, c + (b + r1t) * r1t)]
        if r1t != 0.0:
            pairs_t.append(((-d / r1t - c) / r1t, -d / r1t))
        for q1, q0 in pairs_t:
            raw_t += _quad_candidates(q1, q0)
    # small roots live where the cubic term is locally negligible, and the
    # balanced form can underflow them away entirely: seed candidates from
    # the quadratic and linear tails too
    if a2 != 0.0:
        raw_t += _quad_candidates(a1 / a2, a0 / a2)
    if a1 != 0.0 and math.isfinite(a0 / a1):
        raw_t.append(-a0 / a1)
    # polish each candidate in whichever space evaluates without overflow
    cands = {float(u * s) for u in raw_u} | {float(t) for t in raw_t}
    roots = []
    for t in cands:
        if math.isfinite(a3 * t * t * t) and math.isfinite(a2 * t * t):
            roots.append(_newton1(t, a3, a2, a1, a0))
        elif math.isfinite(t / s):
            roots.append(s * _newton1(t / s, 1.0, bb, cc, dd))
    # The residual bound is scaled by the largest term summed at the
    # candidate itself: the achievable float residual at a genuine root is
    # eps times the local term magnitudes, not eps times the coefficient
    # scale, so a global-scale bound both rejects well-separated huge
    # roots and admits near-root plateau garbage from failed deflations.
    # Residuals overflowing float range are unverifiable and dropped.
    poly = lambda t: ((a3 * t + a2) * t + a1) * t + a0

    def rel_res(t):
        local = max(1.0, abs(a3 * t * t * t), abs(a2 * t * t), abs(a1 * t), abs(a0))
        return abs(poly(t)) / local

    keep = [t for t in roots if math.isfinite(poly(t)) and rel_res(t) <= 1e-7]
    return CubicRoots(tuple(_dedup_sorted(keep, poly)), Degeneracy.cubic)


def solve_cubic_batch(a3: float, a2: float, a1: float, a0s: np.ndarray):
    """Real roots of a shared cubic with per-element constant terms.

    Returns (roots (n, 3), valid (n, 3)); invalid slots hold NaN.  The
    leading coefficients are shared, so the degeneracy class is uniform
    across the batch.
    """
    a0s = np.asarray(a0s, dtype=float)
    n = len(a0s)
    roots = np.full((n, 3), np.nan)
    lead = max(abs(a3), abs(a2), abs(a1))
    scale = max(lead, float(np.max(np.abs(a0s))) if n else 0.0)
    if scale == 0.0:
        return roots, np.zeros((n, 3), dtype=bool)
    cut = LEADING_CUTOFF * scale

    if abs(a3) > cut:
        b, c = a2 / a3, a1 / a3
        d = a0s / a3
        p = c - b * b / 3.0
        q = d - b * c / 3.0 + 2.0 * b ** 3 / 27.0
        disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
        one = disc > 0.0
        if np.any(one):
            sq = np.sqrt(np.where(one, disc, 1.0))
            s = np.cbrt(-q / 2.0 + sq) + np.cbrt(-q / 2.0 - sq)
            roots[one, 0] = (s - b / 3.0)[one]
        three = ~one
        if np.any(three):
            psafe = min(p, -1e-300) if p < 0 else -1e-300
            m = 2.0 * np.sqrt(-psafe / 3.0)
            arg = np.clip(3.0 * q / (psafe * m), -1.0, 1.0)
            theta = np.arccos(arg) / 3.0
            for k in range(3):
                roots[three, k] = (m * np.cos(theta - 2.0 * np.pi * k / 3.0) - b / 3.0)[three]
        valid = ~np.isnan(roots)
        flat = roots[valid]
        a0r = np.broadcast_to(a0s[:, None], (n, 3))[valid]
        roots[valid] = _polish(flat, a3, a2, a1, a0r)
        return roots, valid

    if abs(a2) > cut:
        disc = a1 * a1 - 4.0 * a2 * a0s
        has = disc >= 0.0
        sq = np.sqrt(np.where(has, disc, 0.0))
        roots[has, 0] = ((-a1 - sq) / (2.0 * a2))[has]
        roots[has, 1] = ((-a1 + sq) / (2.0 * a2))[has]
        valid = ~np.isnan(roots)
        flat = roots[valid]
        a0r = np.broadcast_to(a0s[:, None], (n, 3))[valid]
        roots[valid] = _polish(flat, 0.0, a2, a1, a0r)
        return roots, valid

    if abs(a1) > cut:
        roots[:, 0] = -a0s / a1
        return roots, ~np.isnan(roots)

    return roots, np.zeros((n, 3), dtype=bool)


# --- crossing solver -------------------------------------------------------

def solve_cubic_elementwise(a3, a2, a1, a0):
    """Real roots with fully per-element coefficients.

    Returns (roots (n, 3), valid (n, 3)); invalid slots hold NaN.  Same
    screening contract as solve_cubic_batch: degree drops at the relative
    LEADING_CUTOFF, so callers must pre-screen genuinely borderline inputs.
    """
    a3, a2, a1, a0 = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (a3, a2, a1, a0))
    )
    n = a3.shape[0] if a3.ndim else 1
    a3, a2, a1, a0 = (np.atleast_1d(a) for a in (a3, a2, a1, a0))
    roots = np.full((n, 3), np.nan)
    scale = np.maximum.reduce([np.abs(a3), np.abs(a2), np.abs(a1), np.abs(a0)])
    cut = LEADING_CUTOFF * scale
    cubic = np.abs(a3) > cut
    quad = ~cubic & (np.abs(a2) > cut)
    lin = ~cubic & ~quad & (np.abs(a1) > cut)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if cubic.any():
            s3 = np.where(cubic, a3, 1.0)
            b = a2 / s3
            c = a1 / s3
            d = a0 / s3
            p = c - b * b / 3.0
            q = d - b * c / 3.0 + 2.0 * b ** 3 / 27.0
            disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
            one = cubic & (disc > 0.0)
            if one.any():
                sq = np.sqrt(np.where(one, disc, 1.0))
                s = np.cbrt(-q / 2.0 + sq) + np.cbrt(-q / 2.0 - sq)
                roots[one, 0] = (s - b / 3.0)[one]
            three = cubic & ~(disc > 0.0)
            if three.any():
                psafe = np.minimum(p, -1e-300)
                m = 2.0 * np.sqrt(-psafe / 3.0)
                arg = np.clip(3.0 * q / (psafe * m), -1.0, 1.0)
                theta = np.arccos(arg) / 3.0
                for k in range(3):
                    rk = m * np.cos(theta - 2.0 * np.pi * k / 3.0) - b / 3.0
                    roots[three, k] = rk[three]
        if quad.any():
            disc = a1 * a1 - 4.0 * a2 * a0
            has = quad & (disc >= 0.0)
            if has.any():
                sq = np.sqrt(np.where(has, disc, 0.0))
                den = 2.0 * np.where(quad, a2, 1.0)
                roots[has, 0] = ((-a1 - sq) / den)[has]
                roots[has, 1] = ((-a1 + sq) / den)[has]
        if lin.any():
            roots[lin, 0] = (-a0 / np.where(lin, a1, 1.0))[lin]

        valid = ~np.isnan(roots)
        if valid.any():
            idx = np.nonzero(valid)[0]
            c3 = np.where(cubic, a3, 0.0)[idx]
            c2 = np.where(cubic | quad, a2, 0.0)[idx]
            roots[valid] = _polish(roots[valid], c3, c2, a1[idx], a0[idx])
    return roots, valid


def bernstein(t):
    """The four cubic Bernstein weights at t; t may be an array."""
    t = np.asarray(t, dtype=float)
    u = 1.0 - t
    t2 = t * t
    u2 = u * u
    out = np.empty(t.shape + (4,))
    out[..., 0] = u2 * u
    out[..., 1] = 3.0 * u2 * t
    out[..., 2] = 3.0 * u * t2
    out[..., 3] = t2 * t
    return out


def crossing_deltas(ctrl: np.ndarray, query_axis: int, pixels: np.ndarray):
    """Signed offsets phi - current for every control coordinate on one axis.

    ctrl: (4, 2) control points of one curve; query_axis 0 for x, 1 for y.
    pixels: (k, 2) query pixels.
    Returns (deltas (k, 3, 4), valid (k, 3, 4)): for each pixel, up to three
    parameter roots of the non-queried axis equation and, per control point
    index, the offset the queried coordinate would need so the curve passes
    through the pixel.  Slots with |Bernstein weight| < BERN_CUTOFF or no
    real root are invalid.
    """
    ctrl = np.asarray(ctrl, dtype=float)
    pixels = np.asarray(pixels, dtype=float)
    other = 1 - query_axis
    co = power_coeffs(ctrl[None])[0]  # (4, 2)
    oc = co[:, other]
    a0s = oc[0] - pixels[:, other]
    roots, valid = solve_cubic_batch(oc[3], oc[2], oc[1], a0s)

    tt = np.where(valid, roots, 0.0)
    bern = bernstein(tt)  # (k, 3, 4)
    qc = co[:, query_axis]
    q_at = ((qc[3] * tt + qc[2]) * tt + qc[1]) * tt + qc[0]  # (k, 3)
    num = pixels[:, query_axis][:, None] - q_at  # (k, 3)
    ok = valid[:, :, None] & (np.abs(bern) >= BERN_CUTOFF)
    deltas = np.where(ok, num[:, :, None] / np.where(ok, bern, 1.0), np.nan)
    return deltas, ok


def crossing_solutions(
    curve_points: np.ndarray,
    curve_index: int,
    point_index: int,
    axis: str,
    pixel,
) -> CrossingSolutions:
    """Candidate values for one control coordinate so the curve crosses the
    given pixel, with side classification relative to the current value.

    curve_points: (4M, 2) projected control points; axis is "x" or "y".
    """
    curve_points = np.asarray(curve_points, dtype=float)
    q = {"x": 0, "y": 1}[axis]
    ctrl = curve_points[4 * curve_index: 4 * curve_index + 4]
    current = float(ctrl[point_index, q])
    other = 1 - q
    co = power_coeffs(ctrl[None])[0]
    oc = co[:, other]
    px = np.asarray(pixel, dtype=float)

    sols = solve_cubic_real(oc[3], oc[2], oc[1], oc[0] - px[other])
    if sols.identically_zero or not sols.roots:
        return CrossingSolutions((), Side.empty)

    values = []
    for t in sols.roots:
        w = bernstein(t)
        if abs(w[point_index]) < BERN_CUTOFF:
            continue
        rest = float(w @ ctrl[:, q]) - w[point_index] * current
        values.append((px[q] - rest) / w[point_index])
    if not values:
        return CrossingSolutions((), Side.empty)

    values = sorted(values)
    left = [v for v in values if v < current]
    right = [v for v in values if v >= current]
    if left and right:
        return CrossingSolutions(tuple(values), Side.both_sides,
                                 nearest_left=max(left), nearest_right=min(right))
    if left:
        return CrossingSolutions(tuple(values), Side.single_left, nearest_left=max(left))
    return CrossingSolutions(tuple(values), Side.single_right, nearest_right=min(right))
