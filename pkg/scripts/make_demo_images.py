#!/usr/bin/env python3
"""Render the five deterministic demo photos used by the offline caption
table and the docs.  Re-running always reproduces the same bytes."""

import argparse
import hashlib
from pathlib import Path

from tmd.processor import encode_png
from tmd.synth import render_texture

DEMOS = (
    ("crack_rail_head.png", "crack on the rail", 101),
    ("rust_rail_web.png", "rust on the web of the rail", 102),
    ("wear_running_surface.png", "worn running surface of the rail", 103),
    ("decay_sleeper.png", "decayed wooden sleeper surface", 104),
    ("squat_rail_head.png", "squat defect on the head of the rail", 105),
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_images", help="output directory")
    parser.add_argument("--size", type=int, default=512)
    args = parser.parse_args()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, prompt, seed in DEMOS:
        pixels = render_texture(prompt, args.size, args.size, seed)
        data = encode_png(pixels)
        (out_dir / name).write_bytes(data)
        print(f"{hashlib.sha256(data).hexdigest()}  {name}")


if __name__ == "__main__":
    main()
