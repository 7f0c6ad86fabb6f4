import numpy as np
import pytest

from discsplat.bezier import (
    CubicBezier,
    Side,
    crossing_deltas,
    crossing_solutions,
    eval_bezier,
)


def twisted_points():
    # x(t) = t, y(t) = t^3
    return np.array([[0, 0], [1 / 3, 0], [2 / 3, 0], [1, 1]], dtype=float)


def curve_parameter_bound(ctrl, pixel):
    """Cauchy bound on parameters where the curve can cross the pixel: any
    crossing t is a root of one coordinate's cubic, so the smaller of the two
    per-axis root bounds applies."""
    from discsplat.bezier import power_coeffs

    co = power_coeffs(np.asarray(ctrl, dtype=float)[None])[0]
    bounds = []
    for axis in (0, 1):
        c0, c1, c2, c3 = co[:, axis]
        c0 = c0 - pixel[axis]
        if abs(c3) > 1e-12 * max(abs(c0), abs(c1), abs(c2), 1.0):
            bounds.append(1.0 + max(abs(c0), abs(c1), abs(c2)) / abs(c3))
    return min(bounds) if bounds else 30.0


def min_dist_to_curve(ctrl, pixel, t_bound=None):
    c = CubicBezier(*ctrl)
    if t_bound is None:
        t_bound = max(30.0, curve_parameter_bound(ctrl, pixel))
    ts = np.linspace(-t_bound, t_bound, 60001)
    pts = eval_bezier(c, ts)
    d = np.linalg.norm(pts - np.asarray(pixel), axis=1)
    i = int(np.argmin(d))
    # refine around the best sample
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, len(ts) - 1)]
    for _ in range(60):
        mids = np.linspace(lo, hi, 9)
        pm = eval_bezier(c, mids)
        dm = np.linalg.norm(pm - np.asarray(pixel), axis=1)
        j = int(np.argmin(dm))
        lo, hi = mids[max(j - 1, 0)], mids[min(j + 1, 8)]
    return float(np.linalg.norm(eval_bezier(c, 0.5 * (lo + hi)) - np.asarray(pixel)))


class TestWorkedExample:
    def test_single_right_twelve(self):
        cs = crossing_solutions(twisted_points(), 0, 0, "x", (2.0, 0.125))
        assert cs.side == Side.single_right
        assert len(cs.values) == 1
        assert cs.values[0] == pytest.approx(12.0)
        assert cs.nearest_right == pytest.approx(12.0)

    def test_substitution_check(self):
        cs = crossing_solutions(twisted_points(), 0, 0, "x", (2.0, 0.125))
        ctrl = twisted_points().copy()
        ctrl[0, 0] = cs.values[0]
        assert min_dist_to_curve(ctrl, (2.0, 0.125)) <= 1e-5


class TestEmpty:
    def test_unreachable_pixel(self):
        # y(t) = t^2 never reaches y = -1
        ctrl = np.array([[0, 0], [1 / 3, 0], [2 / 3, 1 / 3], [1, 1]], dtype=float)
        cs = crossing_solutions(ctrl, 0, 0, "x", (0.5, -1.0))
        assert cs.side == Side.empty
        assert cs.values == ()


class TestSides:
    def test_both_sides(self):
        # Craft a case with t-roots giving candidates on both sides of 0.
        rng = np.random.default_rng(0)
        found = False
        for _ in range(500):
            ctrl = rng.uniform(-5, 5, size=(4, 2))
            px = rng.uniform(-5, 5, size=2)
            cs = crossing_solutions(ctrl, 0, 0, "x", px)
            if cs.side == Side.both_sides:
                cur = ctrl[0, 0]
                assert cs.nearest_left < cur < cs.nearest_right
                assert cs.nearest_left == max(v for v in cs.values if v < cur)
                assert cs.nearest_right == min(v for v in cs.values if v >= cur)
                found = True
                break
        assert found

    def test_side_empty_iff_no_values(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            ctrl = rng.uniform(-5, 5, size=(4, 2))
            px = rng.uniform(-5, 5, size=2)
            axis = "x" if rng.random() < 0.5 else "y"
            pi = int(rng.integers(0, 4))
            cs = crossing_solutions(ctrl, 0, pi, axis, px)
            assert (cs.side == Side.empty) == (len(cs.values) == 0)


class TestSoundness:
    def test_every_value_crosses_pixel(self):
        rng = np.random.default_rng(2)
        checked = 0
        while checked < 60:
            ctrl = rng.uniform(0, 32, size=(4, 2))
            px = rng.uniform(0, 32, size=2)
            axis_i = int(rng.integers(0, 2))
            pi = int(rng.integers(0, 4))
            cs = crossing_solutions(ctrl, 0, pi, "xy"[axis_i], px)
            for phi in cs.values:
                mod = ctrl.copy()
                mod[pi, axis_i] = phi
                assert min_dist_to_curve(mod, px) <= 1e-5
                checked += 1
            checked += 0 if cs.values else 1


class TestMultiCurveIndexing:
    def test_second_curve(self):
        pts = np.vstack([np.zeros((4, 2)), twisted_points()])
        cs = crossing_solutions(pts, 1, 0, "x", (2.0, 0.125))
        assert cs.values[0] == pytest.approx(12.0)


class TestCrossingDeltas:
    def test_matches_scalar_api(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            ctrl = rng.uniform(0, 32, size=(4, 2))
            px = rng.uniform(0, 32, size=(1, 2))
            axis_i = int(rng.integers(0, 2))
            deltas, ok = crossing_deltas(ctrl, axis_i, px)
            for pi in range(4):
                cs = crossing_solutions(ctrl, 0, pi, "xy"[axis_i], px[0])
                got = sorted(deltas[0, :, pi][ok[0, :, pi]] + ctrl[pi, axis_i])
                assert len(got) == len(cs.values)
                for g, w in zip(got, sorted(cs.values)):
                    assert g == pytest.approx(w, rel=1e-9, abs=1e-9)
