#!/usr/bin/env python3
"""Forge the demo instruction dataset: caption the five demo images offline
and expand each caption into K rephrasings.  Byte-deterministic."""

import argparse
from pathlib import Path

from tmd.forge import (
    ForgeConfig,
    OfflineCaptionBackend,
    OfflineRephraseBackend,
    build_dataset,
    export_dataset,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", default="demo_images")
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="texture_dataset.jsonl")
    args = parser.parse_args()

    paths = sorted(Path(args.images).glob("*.png"))
    if not paths:
        raise SystemExit(f"no .png files under {args.images} "
                         "(run scripts/make_demo_images.py first)")
    dataset = build_dataset(
        [(str(p), p.read_bytes()) for p in paths],
        ForgeConfig(k=args.k, seed=args.seed),
        OfflineCaptionBackend(),
        OfflineRephraseBackend(),
    )
    export_dataset(dataset, args.out)
    print(f"wrote {len(dataset.entries)} entries to {args.out}")


if __name__ == "__main__":
    main()
