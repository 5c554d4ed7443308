"""Train the toy denoiser on procedural colored shapes and save it.

The shipped file ``src/steercompose/data/toy16.bin`` was produced by
running this script with its defaults:

    python demos/train_toy_weights.py

Needs the ``train`` extra (jax, optax). Takes roughly 20 minutes on one CPU core.
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from steercompose.denoiser import DenoiserConfig, save_weights
from steercompose.training import train_toy

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "steercompose" / "data" / "toy16.bin"

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--steps", type=int, default=3000)
parser.add_argument("--batch", type=int, default=16)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
args = parser.parse_args()

logging.basicConfig(level=logging.INFO, format="%(message)s")
cfg = DenoiserConfig(image_size=16, widths=(32, 64), weight_seed=args.seed)
params, losses = train_toy(cfg, args.steps, seed=args.seed, batch=args.batch)

first, last = np.mean(losses[:100]), np.mean(losses[-100:])
print(f"mean loss over first 100 steps {first:.4f}, last 100 steps {last:.4f}")
args.out.parent.mkdir(parents=True, exist_ok=True)
save_weights(params, cfg, args.out)
print(f"wrote {args.out} and {args.out}.manifest")
