#!/usr/bin/env python3
"""Time forward rendering and the full gradient pass on a synthetic scene."""

import argparse
import time

import numpy as np

from discsplat.gradients import backward
from discsplat.rasterizer import prepare, render
from discsplat.scene import init_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--splats", type=int, default=1000)
    ap.add_argument("--segments", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    scene = init_scene(args.size, args.size, args.splats, args.segments, seed=0)
    prepared = prepare(scene, width=args.size, height=args.size)

    fwd = []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        tape = render(prepared, args.size, args.size, threads=args.threads)
        fwd.append(time.perf_counter() - t0)
    print(f"forward : best {min(fwd) * 1e3:8.1f} ms over {args.repeats} runs")

    d_image = np.ones_like(tape.image)
    bwd = []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        backward(tape, prepared, scene, d_image, threads=args.threads)
        bwd.append(time.perf_counter() - t0)
    print(f"backward: best {min(bwd) * 1e3:8.1f} ms over {args.repeats} runs")


if __name__ == "__main__":
    main()
