#!/usr/bin/env python3
"""Miniature three-stage training run.

Stage 1 trains the codec alone, stage 2 trains the token-guided pre-editor
against the frozen codec, stage 3 fine-tunes both jointly.  Iteration counts
here are tiny so the demo finishes in about a minute; scale them up for real
experiments.
"""

import tempfile
from pathlib import Path

import torch

from lvcodec.toydata import make_toy_images
from lvcodec.trainer import TrainConfig, run_stage, smoothed

torch.set_num_threads(1)

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    make_toy_images(root / "imgs", 40, size=(160, 160), seed=3)

    common = dict(dataset_path=str(root / "imgs"), batch_size=4, crop_size=128,
                  out_dir=str(root / "runs"), seed=0)
    print("stage 1: codec only, rate + distortion loss")
    r1 = run_stage(TrainConfig(stage=1, iterations=60,
                               codec={"n_channels": 32},
                               preedit={"scales": 3, "base_channels": 16},
                               **common))
    totals = [h["total"] for h in r1.history]
    print(f"  loss (smoothed): {smoothed(totals, 20)[19]:.3f} -> "
          f"{smoothed(totals, 20)[-1]:.3f}")

    print("stage 2: pre-editor vs frozen codec, token terms on")
    r2 = run_stage(TrainConfig(stage=2, iterations=30, **common),
                   init_checkpoint=r1.checkpoint_path)
    print(f"  estimated token scale: {float(r2.pipeline.token_scale):.4f}")
    scales = [f"{float(v):.4f}" for v in r2.pipeline.preedit.residual_scale]
    print(f"  per-q residual gains: {scales}")
    print(f"  head conv norm after stage 2: "
          f"{float(r2.pipeline.preedit.head.weight.norm()):.4f}")

    print("stage 3: joint fine-tune at small learning rates")
    r3 = run_stage(TrainConfig(stage=3, iterations=30, **common),
                   init_checkpoint=r2.checkpoint_path)
    last = r3.history[-1]
    print(f"  final step: bpp {last['bpp']:.4f}  mse {last['mse']:.5f}  "
          f"tk {last['tk']:.4f}  rk {last['rk']:.5f}")
    print(f"  checkpoint: {r3.checkpoint_path}")
    print(f"  per-step CSV logs beside it: {sorted(p.name for p in (root / 'runs').glob('*.csv'))}")
