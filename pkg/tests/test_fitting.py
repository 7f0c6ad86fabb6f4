import json

import numpy as np
import pytest

from discsplat.fitting import (
    AdamState,
    FitConfig,
    FitReport,
    densify,
    fit,
    loss,
    metrics,
    psnr,
    ssim,
    ssim_with_grad,
    step,
    _ssim_terms,
)
from discsplat.gradients import GradientBuffer
from discsplat.scene import init_scene, scene_to_json


def ssim_oracle(x, y):
    """Direct windowed-formula evaluation: explicit 11x11 Gaussian window
    sums with zero padding, no shared code with the implementation."""
    r = np.arange(11) - 5
    k = np.exp(-0.5 * (r / 1.5) ** 2)
    k = k / k.sum()
    k2d = np.outer(k, k)
    xp = np.pad(x, ((5, 5), (5, 5), (0, 0)))
    yp = np.pad(y, ((5, 5), (5, 5), (0, 0)))
    h, w, c = x.shape
    total = 0.0
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    for i in range(h):
        for j in range(w):
            wx = xp[i : i + 11, j : j + 11]
            wy = yp[i : i + 11, j : j + 11]
            mx = np.einsum("ij,ijc->c", k2d, wx)
            my = np.einsum("ij,ijc->c", k2d, wy)
            sxx = np.einsum("ij,ijc->c", k2d, wx * wx) - mx * mx
            syy = np.einsum("ij,ijc->c", k2d, wy * wy) - my * my
            sxy = np.einsum("ij,ijc->c", k2d, wx * wy) - mx * my
            s = ((2 * mx * my + c1) * (2 * sxy + c2)) / (
                (mx * mx + my * my + c1) * (sxx + syy + c2)
            )
            total += s.sum()
    return total / (h * w * c)


class TestLoss:
    def test_identical_images(self):
        rng = np.random.default_rng(0)
        x = rng.random((16, 16, 3))
        value, d = loss(x, x.copy(), 0.2)
        assert value == 0.0
        assert np.all(d == 0.0)

    def test_l1_channel_average(self):
        # uniform 0.1 offset on one channel, lambda = 0
        x = np.zeros((8, 8, 3))
        x[:, :, 0] = 0.1
        value, d = loss(x, np.zeros((8, 8, 3)), 0.0)
        assert value == pytest.approx(0.1 / 3)
        assert np.all(d[:, :, 0] > 0)
        assert np.all(d[:, :, 1:] == 0.0)

    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.random((20, 24, 3))
        y = rng.random((20, 24, 3))
        _, d = loss(x, y, 0.2)
        h = 1e-6
        coords = [tuple(rng.integers(0, s) for s in x.shape) for _ in range(20)]
        for i in coords:
            xp = x.copy()
            xp[i] += h
            xm = x.copy()
            xm[i] -= h
            fd = (loss(xp, y, 0.2)[0] - loss(xm, y, 0.2)[0]) / (2 * h)
            assert abs(fd - d[i]) <= 1e-5 * max(1.0, abs(fd))

    def test_ssim_grad_finite_difference(self):
        rng = np.random.default_rng(2)
        x = rng.random((14, 14, 3))
        y = rng.random((14, 14, 3))
        _, g = ssim_with_grad(x, y)
        h = 1e-6
        for i in [(0, 0, 0), (7, 7, 1), (13, 13, 2), (3, 10, 0)]:
            xp = x.copy()
            xp[i] += h
            xm = x.copy()
            xm[i] -= h
            fd = (ssim_with_grad(xp, y)[0] - ssim_with_grad(xm, y)[0]) / (2 * h)
            assert abs(fd - g[i]) <= 1e-5 * max(1.0, abs(fd))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            loss(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


class TestMetrics:
    def test_identical(self):
        rng = np.random.default_rng(3)
        x = rng.random((12, 12, 3))
        p, s = metrics(x, x.copy())
        assert p == 99.0
        assert s == 1.0

    def test_psnr_formula(self):
        x = np.full((4, 4, 3), 0.1)
        assert psnr(x, np.zeros_like(x)) == pytest.approx(20.0)

    def test_ssim_against_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.random((20, 16, 3))
        y = rng.random((20, 16, 3))
        assert ssim(x, y) == pytest.approx(ssim_oracle(x, y), abs=1e-10)

    def test_gray_vs_black_luminance_only(self):
        gray = np.full((24, 24, 3), 0.5)
        black = np.zeros((24, 24, 3))
        s_map, mx, *_ = _ssim_terms(gray, black)
        # away from the zero-padded border the window sums to 1: the contrast
        # and structure factors are exactly 1 and only luminance remains
        c1 = 0.01 ** 2
        assert s_map[12, 12, 0] == pytest.approx(c1 / (0.25 + c1), rel=1e-9)
        assert ssim(gray, black) == pytest.approx(ssim_oracle(gray, black), abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            metrics(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestConfig:
    def test_defaults(self):
        cfg = FitConfig()
        assert cfg.lr_c_curve == 2e-4
        assert cfg.M == 3
        assert cfg.lambda_ssim == 0.2
        assert cfg.densify_interval == 300

    def test_validation(self):
        with pytest.raises(ValueError):
            FitConfig(lr_center=0.0)
        with pytest.raises(ValueError):
            FitConfig(lambda_ssim=1.5)
        with pytest.raises(ValueError):
            FitConfig(M=0)

    def test_json_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"iters": 10, "seed": 7, "lr_center": 1e-3}))
        cfg = FitConfig.from_file(p)
        assert cfg.iters == 10 and cfg.seed == 7 and cfg.lr_center == 1e-3

    def test_toml_file(self, tmp_path):
        p = tmp_path / "cfg.toml"
        p.write_text("iters = 5\nlambda_ssim = 0.3\n")
        cfg = FitConfig.from_file(p)
        assert cfg.iters == 5 and cfg.lambda_ssim == 0.3

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ValueError):
            FitConfig.from_dict({"iters": 5, "momentum": 0.9})


def small_scene(n=4, seed=0):
    return init_scene(32, 32, n, 2, seed=seed)


class TestStep:
    def test_zero_gradients_unchanged(self):
        scene = small_scene()
        before = scene_to_json(scene)
        state = AdamState.zeros(scene)
        step(scene, GradientBuffer.zeros(scene), state, FitConfig())
        assert scene_to_json(scene) == before

    def test_first_step_is_signed_lr(self):
        scene = small_scene()
        state = AdamState.zeros(scene)
        grads = GradientBuffer.zeros(scene)
        grads.d_raw_opacities[0] = 3.7
        grads.d_raw_opacities[1] = -0.002
        before = scene.raw_opacities.copy()
        cfg = FitConfig()
        step(scene, grads, state, cfg)
        # bias-corrected Adam: first update is lr * g / (|g| + eps)
        assert scene.raw_opacities[0] == pytest.approx(before[0] - cfg.lr_raw_opacity, rel=1e-9)
        assert scene.raw_opacities[1] == pytest.approx(before[1] + cfg.lr_raw_opacity, rel=1e-9)

    def test_frozen_group(self):
        scene = small_scene()
        state = AdamState.zeros(scene)
        grads = GradientBuffer.zeros(scene)
        grads.d_c_curves[:] = 1.0
        before = scene.c_curves.copy()
        step(scene, grads, state, FitConfig(), frozen=("c_curves",))
        assert np.array_equal(scene.c_curves, before)

    def test_moment_roundtrip_trajectory(self):
        rng = np.random.default_rng(5)
        cfg = FitConfig()
        scenes = [small_scene(), small_scene()]
        states = [AdamState.zeros(s) for s in scenes]
        g1 = GradientBuffer.zeros(scenes[0])
        g1.d_centers[:] = rng.normal(size=g1.d_centers.shape)
        g2 = GradientBuffer.zeros(scenes[0])
        g2.d_centers[:] = rng.normal(size=g2.d_centers.shape)
        step(scenes[0], g1, states[0], cfg)
        step(scenes[1], g1, states[1], cfg)
        states[1] = AdamState.from_dict(states[1].to_dict())  # serialize mid-run
        step(scenes[0], g2, states[0], cfg)
        step(scenes[1], g2, states[1], cfg)
        assert np.array_equal(scenes[0].centers, scenes[1].centers)


class TestDensify:
    def test_no_clones_no_prunes(self):
        scene = small_scene()
        before = scene_to_json(scene)
        out, keep, nc = densify(scene, np.zeros(scene.n), FitConfig(), np.random.default_rng(0))
        assert nc == 0
        assert np.array_equal(keep, np.arange(scene.n))
        assert scene_to_json(out) == before

    def test_clone_copies_c_curve_bytes(self):
        scene = small_scene()
        norms = np.zeros(scene.n)
        norms[2] = 1.0
        out, keep, nc = densify(scene, norms, FitConfig(densify_grad_threshold=0.5), np.random.default_rng(1))
        assert nc == 1
        assert out.n == scene.n + 1
        clone = out.c_curves[-1]
        assert clone.tobytes() == scene.c_curves[2].tobytes()
        # center jittered, fresh unique depth key
        assert not np.array_equal(out.centers[-1], scene.centers[2])
        assert len(np.unique(out.depth_keys)) == out.n

    def test_prune_transparent(self):
        scene = small_scene()
        scene.raw_opacities[1] = -10.0  # sigmoid ~ 4.5e-5 < 0.005
        out, keep, nc = densify(scene, np.zeros(scene.n), FitConfig(), np.random.default_rng(2))
        assert out.n == scene.n - 1
        assert 1 not in keep

    def test_state_rebuild_shapes(self):
        scene = small_scene()
        state = AdamState.zeros(scene)
        state.m["centers"][:] = 1.0
        state.rebuild(np.array([0, 2, 3]), 2)
        assert state.m["centers"].shape == (5, 2)
        assert np.all(state.m["centers"][:3] == 1.0)
        assert np.all(state.m["centers"][3:] == 0.0)


def edge_target(size=32):
    t = np.zeros((size, size, 3))
    t[:, size // 2 :] = 0.85
    return t


class TestFit:
    def test_zero_iters_is_init(self):
        target = edge_target()
        cfg = FitConfig(iters=0, seed=3)
        scene, report = fit(target, cfg, n_splats=8)
        ref = init_scene(32, 32, 8, cfg.M, seed=3, target=target)
        assert scene_to_json(scene) == scene_to_json(ref)
        assert report.checkpoints[0].iteration == 0

    def test_loss_decreases(self):
        target = edge_target()
        history: list = []
        scene, report = fit(target, FitConfig(iters=60, seed=0), n_splats=8, loss_history=history)
        assert history[-1] < history[0]
        assert report.checkpoints[-1].iteration == 60
        assert np.isfinite(report.checkpoints[-1].psnr)

    def test_reproducible(self):
        target = edge_target()
        cfg = FitConfig(iters=40, seed=1)
        s1, r1 = fit(target, cfg, n_splats=6)
        s2, r2 = fit(target, cfg, n_splats=6)
        assert scene_to_json(s1) == scene_to_json(s2)
        assert [c.loss for c in r1.checkpoints] == [c.loss for c in r2.checkpoints]

    def test_baseline_freezes_curves(self):
        target = edge_target()
        cfg = FitConfig(iters=30, seed=2)
        scene, _ = fit(target, cfg, n_splats=6, baseline=True)
        ref = init_scene(32, 32, 6, cfg.M, seed=2, target=target)
        assert np.array_equal(scene.c_curves, ref.c_curves)
        # but the run did optimize the continuous groups
        assert not np.array_equal(scene.centers, ref.centers)

    def test_densification_in_loop(self):
        target = edge_target()
        cfg = FitConfig(iters=50, seed=4, densify_interval=20, densify_grad_threshold=1e-9)
        scene, report = fit(target, cfg, n_splats=5)
        assert scene.n > 5  # threshold forced clones
        assert len(np.unique(scene.depth_keys)) == scene.n

    def test_report_csv(self, tmp_path):
        target = edge_target()
        _, report = fit(target, FitConfig(iters=20, seed=0), n_splats=4, checkpoint_every=10)
        p = tmp_path / "report.csv"
        report.to_csv(p)
        rows = p.read_text().strip().splitlines()
        assert rows[0].startswith("iteration,loss,psnr,ssim,n_splats,wall_time")
        assert len(rows) == 1 + len(report.checkpoints)
        assert "iter" in report.summary()
