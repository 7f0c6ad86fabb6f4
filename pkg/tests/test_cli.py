import json

import numpy as np
import pytest

from discsplat.cli import main
from discsplat.imageio import load_png, save_png
from discsplat.scene import Scene, SceneMode, init_scene, save_scene, scene_to_json, load_scene


@pytest.fixture
def target_png(tmp_path):
    t = np.zeros((32, 32, 3))
    t[:, 16:] = 0.85
    p = tmp_path / "target.png"
    save_png(t, p)
    return p


def scene3d(tmp_path):
    rng = np.random.default_rng(0)
    q = rng.normal(size=(1, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    sc = Scene(
        mode=SceneMode.projected3d,
        M=1,
        background=np.zeros(3),
        centers=np.array([[0.0, 0.0, 5.0]]),
        rotations=q,
        log_scales=np.zeros((1, 3)),
        raw_opacities=np.zeros(1),
        colors=np.full((1, 3), 0.5),
        c_curves=rng.normal(size=(1, 4, 2)),
        depth_keys=np.zeros(1),
    )
    p = tmp_path / "scene3d.json"
    save_scene(sc, p)
    return p


class TestImageIO:
    def test_roundtrip_quantized(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.random((10, 12, 3))
        p = tmp_path / "a.png"
        save_png(img, p)
        back = load_png(p)
        assert back.shape == (10, 12, 3)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12

    def test_deterministic_bytes(self, tmp_path):
        img = np.random.default_rng(2).random((8, 8, 3))
        p1, p2 = tmp_path / "1.png", tmp_path / "2.png"
        save_png(img, p1)
        save_png(img, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_exact_levels(self, tmp_path):
        img = np.zeros((4, 4, 3))
        img[0, 0] = [0.0, 0.5, 1.0]
        p = tmp_path / "l.png"
        save_png(img, p)
        back = load_png(p)
        assert back[0, 0, 0] == 0.0 and back[0, 0, 2] == 1.0
        assert back[0, 0, 1] == pytest.approx(128 / 255)

    def test_clipping(self, tmp_path):
        img = np.full((2, 2, 3), 1.7)
        p = tmp_path / "c.png"
        save_png(img, p)
        assert np.all(load_png(p) == 1.0)

    def test_bad_shape(self, tmp_path):
        with pytest.raises(ValueError):
            save_png(np.zeros((4, 4)), tmp_path / "x.png")


class TestFitCommand:
    def test_zero_iters_is_init(self, tmp_path, target_png):
        out = tmp_path / "out"
        rc = main(["fit", "--target", str(target_png), "--out", str(out),
                   "--iters", "0", "--splats", "5", "--seed", "3"])
        assert rc == 0
        got = load_scene(out / "scene.json")
        ref = init_scene(32, 32, 5, 3, seed=3, target=load_png(target_png))
        assert scene_to_json(got) == scene_to_json(ref)

    def test_deterministic_outputs(self, tmp_path, target_png):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            rc = main(["fit", "--target", str(target_png), "--out", str(out),
                       "--iters", "8", "--splats", "4", "--seed", "0"])
            assert rc == 0
            outs.append(out)
        assert (outs[0] / "scene.json").read_bytes() == (outs[1] / "scene.json").read_bytes()
        # report CSVs match except the wall-time column
        rows = [p.joinpath("report.csv").read_text().splitlines() for p in outs]
        strip = lambda lines: [",".join(l.split(",")[:-1]) for l in lines]
        assert strip(rows[0]) == strip(rows[1])

    def test_baseline_freezes_curves(self, tmp_path, target_png):
        out = tmp_path / "out"
        rc = main(["fit", "--target", str(target_png), "--out", str(out),
                   "--iters", "10", "--splats", "4", "--seed", "2", "--baseline"])
        assert rc == 0
        got = load_scene(out / "scene.json")
        ref = init_scene(32, 32, 4, 3, seed=2, target=load_png(target_png))
        assert np.array_equal(got.c_curves, ref.c_curves)

    def test_missing_target(self, tmp_path):
        rc = main(["fit", "--target", str(tmp_path / "nope.png"), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_bad_config(self, tmp_path, target_png):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"lr_center": -1.0}))
        rc = main(["fit", "--target", str(target_png), "--out", str(tmp_path / "o"),
                   "--config", str(cfg)])
        assert rc == 3

    def test_unknown_config_key(self, tmp_path, target_png):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"warp_speed": 9}))
        rc = main(["fit", "--target", str(target_png), "--out", str(tmp_path / "o"),
                   "--config", str(cfg)])
        assert rc == 3


class TestRenderCommand:
    def test_roundtrip_eval(self, tmp_path, target_png, capsys):
        out = tmp_path / "out"
        main(["fit", "--target", str(target_png), "--out", str(out),
              "--iters", "0", "--splats", "4", "--seed", "0"])
        png = tmp_path / "r.png"
        rc = main(["render", "--scene", str(out / "scene.json"), "--out", str(png),
                   "--width", "32", "--height", "32"])
        assert rc == 0
        rc = main(["eval", "--render", str(png), "--target", str(png)])
        assert rc == 0
        text = capsys.readouterr().out
        assert "PSNR 99" in text and "SSIM 1.0" in text

    def test_flat2d_ignores_camera(self, tmp_path, target_png, capsys):
        out = tmp_path / "out"
        main(["fit", "--target", str(target_png), "--out", str(out),
              "--iters", "0", "--splats", "4", "--seed", "0"])
        rc = main(["render", "--scene", str(out / "scene.json"), "--out", str(tmp_path / "r.png"),
                   "--camera", "whatever.json", "--width", "16", "--height", "16"])
        assert rc == 0
        assert "ignored" in capsys.readouterr().err

    def test_3d_without_camera(self, tmp_path):
        rc = main(["render", "--scene", str(scene3d(tmp_path)), "--out", str(tmp_path / "r.png")])
        assert rc == 4

    def test_unreadable_scene(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        rc = main(["render", "--scene", str(bad), "--out", str(tmp_path / "r.png")])
        assert rc == 2


class TestEvalCommand:
    def test_size_mismatch(self, tmp_path):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        save_png(np.zeros((8, 8, 3)), a)
        save_png(np.zeros((9, 8, 3)), b)
        assert main(["eval", "--render", str(a), "--target", str(b)]) == 5


class TestProjectCommand:
    def test_flat2d_rejected(self, tmp_path, target_png):
        out = tmp_path / "out"
        main(["fit", "--target", str(target_png), "--out", str(out),
              "--iters", "0", "--splats", "4", "--seed", "0"])
        rc = main(["project", "--scene", str(out / "scene.json"), "--camera", "x.json"])
        assert rc == 4

    def test_projects_scene(self, tmp_path):
        cam = tmp_path / "cam.json"
        cam.write_text(json.dumps({
            "view": np.eye(4).reshape(-1).tolist(), "fx": 50.0, "fy": 50.0,
            "cx": 16.0, "cy": 16.0, "width": 32, "height": 32, "near": 0.1,
        }))
        outp = tmp_path / "proj.json"
        rc = main(["project", "--scene", str(scene3d(tmp_path)), "--camera", str(cam),
                   "--out", str(outp)])
        assert rc == 0
        rows = json.loads(outp.read_text())
        assert rows[0]["culled"] is False
        assert len(rows[0]["mu2d"]) == 2


class TestCheckCommands:
    def test_implicit_check_passes(self, capsys):
        rc = main(["implicit-check", "--curves", "50"])
        assert rc == 0
        assert "PASS" in capsys.readouterr().out

    def test_solver_check_passes(self, capsys):
        rc = main(["solver-check", "--draws", "2000"])
        assert rc == 0
        assert "overall: PASS" in capsys.readouterr().out

    def test_grad_check_passes(self, capsys):
        rc = main(["grad-check", "--scenes", "20"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "overall: PASS" in out
