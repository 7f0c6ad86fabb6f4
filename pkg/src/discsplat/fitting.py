"""Image-fitting loop: L1+SSIM loss with exact gradients, per-group Adam,
clone-based densification, and PSNR/SSIM metrics.

All images are float arrays in [0, 1], shape (H, W, 3).
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import convolve1d
from scipy.special import expit

from .gradients import GradientBuffer, backward
from .rasterizer import prepare, render, render_plain
from .scene import Scene, init_scene

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP = 99.0
PRUNE_OPACITY = 0.005


def _window_kernel():
    r = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    k = np.exp(-0.5 * (r / SSIM_SIGMA) ** 2)
    return k / k.sum()


_KERNEL = _window_kernel()


def _filt(img: np.ndarray) -> np.ndarray:
    """Separable Gaussian window over the two spatial axes.

    Zero padding keeps the operator self-adjoint, which the analytic SSIM
    gradient relies on.
    """
    out = convolve1d(img, _KERNEL, axis=0, mode="constant")
    return convolve1d(out, _KERNEL, axis=1, mode="constant")


def _ssim_terms(x: np.ndarray, y: np.ndarray):
    mx, my = _filt(x), _filt(y)
    sxx = _filt(x * x) - mx * mx
    syy = _filt(y * y) - my * my
    sxy = _filt(x * y) - mx * my
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    a1 = 2.0 * mx * my + c1
    a2 = 2.0 * sxy + c2
    b1 = mx * mx + my * my + c1
    b2 = sxx + syy + c2
    s = (a1 * a2) / (b1 * b2)
    return s, mx, my, a1, a2, b1, b2


def ssim(render_img: np.ndarray, target: np.ndarray) -> float:
    """Mean structural similarity, channel-averaged."""
    s, *_ = _ssim_terms(np.asarray(render_img, float), np.asarray(target, float))
    return float(s.mean())


def ssim_with_grad(x: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    """(mean SSIM, its exact gradient w.r.t. x).

    The terms are factored so that for bitwise-identical inputs every factor
    cancels exactly and the gradient comes out exactly zero.
    """
    s, mx, my, a1, a2, b1, b2 = _ssim_terms(x, y)
    r = a1 / (b1 * b2)
    rho = a2 / b2
    d_mu = 2.0 * (a2 / (b1 * b2)) * (my - mx * (a1 / b1))
    # chain through the window: the mean/variance maps are windowed sums, and
    # with zero padding the adjoint of the window is the window itself
    g = _filt(d_mu) + 2.0 * (
        (_filt(r * rho * mx) - _filt(r * my)) + (y * _filt(r) - x * _filt(r * rho))
    )
    return float(s.mean()), g / s.size


def loss(render_img: np.ndarray, target: np.ndarray, lambda_ssim: float = 0.2):
    """(1-λ)·L1 + λ·(1−SSIM) and its exact per-pixel gradient."""
    render_img = np.asarray(render_img, dtype=float)
    target = np.asarray(target, dtype=float)
    if render_img.shape != target.shape:
        raise ValueError("render and target dimensions differ")
    diff = render_img - target
    l1 = float(np.abs(diff).mean())
    d_l1 = np.sign(diff) / diff.size
    if lambda_ssim == 0.0:
        return l1, d_l1
    sm, d_sm = ssim_with_grad(render_img, target)
    value = (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - sm)
    d_image = (1.0 - lambda_ssim) * d_l1 - lambda_ssim * d_sm
    return value, d_image


def psnr(render_img: np.ndarray, target: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(render_img, float) - np.asarray(target, float)) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * np.log10(1.0 / mse)


def metrics(render_img: np.ndarray, target: np.ndarray) -> Tuple[float, float]:
    """(PSNR in dB, mean SSIM)."""
    if np.shape(render_img) != np.shape(target):
        raise ValueError("render and target dimensions differ")
    return psnr(render_img, target), ssim(render_img, target)


@dataclass
class FitConfig:
    iters: int = 2000
    lr_center: float = 2e-3
    lr_theta: float = 1e-3
    lr_log_scales: float = 5e-3
    lr_raw_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    lr_c_curve: float = 2e-4
    M: int = 3
    lambda_ssim: float = 0.2
    densify_interval: int = 300
    densify_grad_threshold: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    seed: int = 0

    def __post_init__(self):
        for name in (
            "lr_center",
            "lr_theta",
            "lr_log_scales",
            "lr_raw_opacity",
            "lr_color",
            "lr_c_curve",
        ):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise ValueError("lambda_ssim must be in [0, 1]")
        if self.iters < 0 or self.M < 1 or self.densify_interval < 1:
            raise ValueError("bad iteration / curve-count configuration")

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "FitConfig":
        text = open(path, "rb").read()
        if str(path).endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            return cls.from_dict(tomllib.loads(text.decode()))
        return cls.from_dict(json.loads(text.decode()))

    def to_dict(self) -> dict:
        return asdict(self)


# (scene attribute, gradient attribute, learning-rate attribute)
_GROUPS = (
    ("centers", "d_centers", "lr_center"),
    ("rotations", "d_thetas", "lr_theta"),
    ("log_scales", "d_log_scales", "lr_log_scales"),
    ("raw_opacities", "d_raw_opacities", "lr_raw_opacity"),
    ("colors", "d_colors", "lr_color"),
    ("c_curves", "d_c_curves", "lr_c_curve"),
)


@dataclass
class AdamState:
    t: int
    m: dict
    v: dict

    @classmethod
    def zeros(cls, scene: Scene) -> "AdamState":
        m = {attr: np.zeros_like(getattr(scene, attr)) for attr, _, _ in _GROUPS}
        v = {attr: np.zeros_like(getattr(scene, attr)) for attr, _, _ in _GROUPS}
        return cls(t=0, m=m, v=v)

    def rebuild(self, keep: np.ndarray, n_new: int) -> None:
        """Drop pruned rows and append zero moments for cloned splats."""
        for d in (self.m, self.v):
            for attr in d:
                kept = d[attr][keep]
                grown = np.zeros((n_new,) + kept.shape[1:])
                d[attr] = np.concatenate([kept, grown])

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(
            t=int(d["t"]),
            m={k: np.asarray(v, dtype=float) for k, v in d["m"].items()},
            v={k: np.asarray(v, dtype=float) for k, v in d["v"].items()},
        )


def step(
    scene: Scene,
    grads: GradientBuffer,
    state: AdamState,
    config: FitConfig,
    frozen: Tuple[str, ...] = (),
) -> Scene:
    """One bias-corrected Adam update per parameter group, in place."""
    state.t += 1
    bc1 = 1.0 - config.beta1 ** state.t
    bc2 = 1.0 - config.beta2 ** state.t
    for attr, gattr, lrattr in _GROUPS:
        m, v = state.m[attr], state.v[attr]
        g = getattr(grads, gattr)
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        if attr in frozen:
            continue
        update = getattr(config, lrattr) * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        getattr(scene, attr)[...] -= update
    return scene


def densify(
    scene: Scene,
    center_grad_norms: np.ndarray,
    config: FitConfig,
    rng: np.random.Generator,
):
    """Prune transparent splats and clone high-gradient ones.

    Clones copy every attribute including c_curve; the clone's center is
    jittered by 0.1·max scale and it gets a fresh depth key.
    Returns (scene, keep indices, clone count) so optimizer state can follow.
    """
    keep = np.nonzero(expit(scene.raw_opacities) >= PRUNE_OPACITY)[0]
    clone = keep[center_grad_norms[keep] > config.densify_grad_threshold]
    parts = {}
    for attr in (
        "centers",
        "rotations",
        "log_scales",
        "raw_opacities",
        "colors",
        "c_curves",
        "depth_keys",
    ):
        arr = getattr(scene, attr)
        parts[attr] = np.concatenate([arr[keep], arr[clone]])
    nk, nc = len(keep), len(clone)
    if nc:
        jitter = 0.1 * np.exp(scene.log_scales[clone]).max(axis=1)
        parts["centers"][nk:] += jitter[:, None] * rng.standard_normal((nc, 2))
        top = scene.depth_keys.max() if scene.n else 0.0
        parts["depth_keys"][nk:] = top + 1.0 + np.arange(nc)
    out = Scene(mode=scene.mode, M=scene.M, background=scene.background, **parts)
    return out, keep, nc


@dataclass
class Checkpoint:
    iteration: int
    loss: float
    psnr: float
    ssim: float
    n_splats: int
    wall_time: float


@dataclass
class FitReport:
    checkpoints: List[Checkpoint] = field(default_factory=list)
    final_scene_path: Optional[str] = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "loss", "psnr", "ssim", "n_splats", "wall_time"])
            for c in self.checkpoints:
                w.writerow(
                    [c.iteration, repr(c.loss), repr(c.psnr), repr(c.ssim), c.n_splats, repr(c.wall_time)]
                )

    def summary(self) -> str:
        if not self.checkpoints:
            return "no checkpoints"
        last = self.checkpoints[-1]
        return (
            f"iter {last.iteration}: loss {last.loss:.6f}  "
            f"PSNR {last.psnr:.2f} dB  SSIM {last.ssim:.4f}  "
            f"{last.n_splats} splats  {last.wall_time:.1f} s"
        )


def fit(
    target: np.ndarray,
    config: FitConfig,
    scene: Optional[Scene] = None,
    n_splats: int = 64,
    baseline: bool = False,
    background=(0.0, 0.0, 0.0),
    threads: Optional[int] = None,
    checkpoint_every: int = 100,
    loss_history: Optional[list] = None,
    on_checkpoint=None,
) -> Tuple[Scene, FitReport]:
    """Fit a scene to `target` (H, W, 3 floats in [0, 1]).

    baseline=True runs plain Gaussian splatting with the same budget: the
    renderer never scissors and every c_curve stays frozen at its
    initialization.
    """
    target = np.asarray(target, dtype=float)
    h, w = target.shape[:2]
    if scene is None:
        scene = init_scene(w, h, n_splats, config.M, seed=config.seed, target=target, background=background)
    state = AdamState.zeros(scene)
    frozen = ("c_curves",) if baseline else ()
    rng = np.random.default_rng(config.seed)
    accum = np.zeros(scene.n)
    report = FitReport()
    start = time.perf_counter()

    forward = render_plain if baseline else render

    def checkpoint(it, value):
        img = forward(prepare(scene, width=w, height=h), w, h, background=background, threads=threads).image
        p, s = metrics(img, target)
        report.checkpoints.append(
            Checkpoint(it, value, p, s, scene.n, time.perf_counter() - start)
        )
        if on_checkpoint is not None:
            on_checkpoint(it, img)

    if config.iters == 0:
        img = forward(prepare(scene, width=w, height=h), w, h, background=background, threads=threads).image
        checkpoint(0, loss(img, target, config.lambda_ssim)[0])
        return scene, report

    value = float("nan")
    for it in range(1, config.iters + 1):
        prepared = prepare(scene, width=w, height=h)
        tape = forward(prepared, w, h, background=background, threads=threads)
        value, d_image = loss(tape.image, target, config.lambda_ssim)
        if loss_history is not None:
            loss_history.append(value)
        grads = backward(tape, prepared, scene, d_image, threads=threads, curve_grads=not baseline)
        accum += np.linalg.norm(grads.d_centers, axis=1)
        step(scene, grads, state, config, frozen)
        if it % config.densify_interval == 0 and it < config.iters:
            scene, keep, nc = densify(scene, accum, config, rng)
            state.rebuild(keep, nc)
            accum = np.zeros(scene.n)
        if it % checkpoint_every == 0 or it == config.iters:
            checkpoint(it, value)
    return scene, report
