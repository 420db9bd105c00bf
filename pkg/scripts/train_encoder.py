#!/usr/bin/env python3
"""Fit the inversion encoder against a trained generator checkpoint.

Writes a new checkpoint that bundles the original networks plus the encoder.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from threadpoolctl import threadpool_limits  # noqa: E402

from blobgen.inversion import train_encoder  # noqa: E402
from blobgen.io import load_checkpoint, save_checkpoint  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", default="runs/toy32/final.ckpt")
    ap.add_argument("--out", default="runs/toy32/final-with-encoder.ckpt")
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    model = load_checkpoint(args.checkpoint)
    print(f"fitting encoder for {args.checkpoint} ({args.steps} steps)", flush=True)
    with threadpool_limits(limits=1):
        model.encoder = train_encoder(model, steps=args.steps, seed=args.seed,
                                      verbose=True)
    save_checkpoint(args.out, model)
    print(f"wrote {args.out}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
