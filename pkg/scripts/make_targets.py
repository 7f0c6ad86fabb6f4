#!/usr/bin/env python3
"""Write the hard-edge synthetic target images as PNGs."""

import argparse
from pathlib import Path

from discsplat.imageio import save_png
from discsplat.targets import TARGETS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="targets", help="output directory")
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, make in TARGETS.items():
        path = out / f"{name}.png"
        save_png(make(args.size), path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
