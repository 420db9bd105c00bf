#!/usr/bin/env python3
"""Canonical toy-scene training run.

Produces runs/toy32/: step-0.ckpt (baseline), periodic checkpoints, final.ckpt,
and train_log.tsv. The acceptance suite consumes this directory.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from blobgen.config import ModelConfig, TrainConfig  # noqa: E402
from blobgen.model import SceneModel  # noqa: E402
from blobgen.training import train  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/toy32")
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--batch", type=int, default=16)
    args = ap.parse_args()

    mcfg = ModelConfig()  # desk scale: k=5, 32x32, d_in = d_style = 64
    tcfg = TrainConfig(steps=args.steps, seed=args.seed, batch_size=args.batch,
                       checkpoint_every=5000, log_every=1)
    model = SceneModel.create(mcfg, tcfg, seed=args.seed)
    print(f"training {tcfg.steps} steps (k={mcfg.k}, {mcfg.img_res}x{mcfg.img_res}, "
          f"batch {tcfg.batch_size}, seed {tcfg.seed}) -> {args.out}", flush=True)
    train(model, tcfg, out_dir=args.out, verbose=True)
    print("done", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
