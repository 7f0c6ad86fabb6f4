"""Command-line surface: fitting, rendering, evaluation, projection, and
the on-demand verification harnesses.

Exit codes are part of the contract: 0 ok, 2 bad input file, 3 bad config,
4 mode/camera mismatch, 5 shape mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checks
from .fitting import FitConfig, fit, metrics
from .imageio import load_png, save_png
from .projection import load_camera, project_gaussian
from .rasterizer import render_scene
from .scene import SceneMode, load_scene, save_scene

EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_MODE = 4
EXIT_SHAPE = 5


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_image(path):
    try:
        return load_png(path)
    except (OSError, ValueError) as e:
        raise FileNotFoundError(f"cannot read image {path}: {e}")


def cmd_fit(args) -> int:
    try:
        target = _load_image(args.target)
    except FileNotFoundError as e:
        return _fail(EXIT_INPUT, str(e))
    try:
        config = FitConfig.from_file(args.config) if args.config else FitConfig()
        overrides = {}
        if args.iters is not None:
            overrides["iters"] = args.iters
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.curves is not None:
            overrides["M"] = args.curves
        if overrides:
            config = FitConfig.from_dict({**config.to_dict(), **overrides})
    except (ValueError, TypeError, OSError) as e:
        # TOML/JSON decode errors subclass ValueError
        return _fail(EXIT_CONFIG, f"bad config: {e}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def save_checkpoint(it, img):
        save_png(img, out / f"render_{it:06d}.png")

    scene, report = fit(
        target,
        config,
        n_splats=args.splats,
        baseline=args.baseline,
        threads=args.threads,
        on_checkpoint=save_checkpoint,
    )
    save_scene(scene, out / "scene.json")
    report.final_scene_path = str(out / "scene.json")
    report.to_csv(out / "report.csv")
    print(report.summary())
    return 0


def cmd_render(args) -> int:
    try:
        scene = load_scene(args.scene)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        return _fail(EXIT_INPUT, f"cannot read scene {args.scene}: {e}")
    cam = None
    if scene.mode == SceneMode.flat2d:
        if args.camera:
            print("warning: flat2d scene, --camera ignored", file=sys.stderr)
    else:
        if not args.camera:
            return _fail(EXIT_MODE, f"{scene.mode.value} scene requires --camera")
        try:
            cam = load_camera(args.camera)
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
            return _fail(EXIT_INPUT, f"cannot read camera {args.camera}: {e}")
    tape = render_scene(scene, args.width, args.height, cam=cam, threads=args.threads)
    save_png(tape.image, args.out)
    return 0


def cmd_eval(args) -> int:
    try:
        render_img = _load_image(args.render)
        target = _load_image(args.target)
    except FileNotFoundError as e:
        return _fail(EXIT_INPUT, str(e))
    if render_img.shape != target.shape:
        return _fail(EXIT_SHAPE, f"size mismatch: {render_img.shape} vs {target.shape}")
    p, s = metrics(render_img, target)
    print(f"PSNR {p:.4f} dB")
    print(f"SSIM {s:.6f}")
    return 0


def cmd_project(args) -> int:
    try:
        scene = load_scene(args.scene)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        return _fail(EXIT_INPUT, f"cannot read scene {args.scene}: {e}")
    if scene.mode == SceneMode.flat2d:
        return _fail(EXIT_MODE, "flat2d scenes have no projection; use a 3D scene")
    try:
        cam = load_camera(args.camera)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        return _fail(EXIT_INPUT, f"cannot read camera {args.camera}: {e}")
    rows = []
    for i, splat in enumerate(scene.splats):
        proj = project_gaussian(splat, cam)
        if proj is None:
            rows.append({"splat": i, "culled": True})
        else:
            mu2d, cov2d, depth = proj
            rows.append(
                {
                    "splat": i,
                    "culled": False,
                    "mu2d": mu2d.tolist(),
                    "cov2d": cov2d.tolist(),
                    "depth": depth,
                }
            )
    text = json.dumps(rows, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _run_check(report) -> int:
    print(report.table())
    return 0 if report.ok else 1


def cmd_grad_check(args) -> int:
    return _run_check(checks.grad_check(n_scenes=args.scenes, seed=args.seed))


def cmd_implicit_check(args) -> int:
    return _run_check(checks.implicit_check(n_curves=args.curves, seed=args.seed))


def cmd_solver_check(args) -> int:
    return _run_check(checks.solver_check(n_draws=args.draws, seed=args.seed))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="discsplat")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a scene to a PNG target")
    f.add_argument("--target", required=True)
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--config", default=None, help="FitConfig TOML/JSON")
    f.add_argument("--splats", type=int, default=64)
    f.add_argument("--curves", type=int, default=None)
    f.add_argument("--iters", type=int, default=None)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--baseline", action="store_true", help="freeze all curves")
    f.add_argument("--threads", type=int, default=None)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("render", help="render a scene to a PNG")
    r.add_argument("--scene", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--camera", default=None)
    r.add_argument("--width", type=int, default=256)
    r.add_argument("--height", type=int, default=256)
    r.add_argument("--threads", type=int, default=None)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="PSNR/SSIM of a render against a target")
    e.add_argument("--render", required=True)
    e.add_argument("--target", required=True)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("project", help="project a 3D scene through a camera")
    pr.add_argument("--scene", required=True)
    pr.add_argument("--camera", required=True)
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=cmd_project)

    g = sub.add_parser("grad-check", help="finite-difference gradient verification")
    g.add_argument("--scenes", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_grad_check)

    ic = sub.add_parser("implicit-check", help="implicitization residual verification")
    ic.add_argument("--curves", type=int, default=1000)
    ic.add_argument("--seed", type=int, default=0)
    ic.set_defaults(func=cmd_implicit_check)

    sc = sub.add_parser("solver-check", help="cubic solver oracle verification")
    sc.add_argument("--draws", type=int, default=100000)
    sc.add_argument("--seed", type=int, default=0)
    sc.set_defaults(func=cmd_solver_check)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
