"""Overfit a tiny RAMiT to one noisy test card.

This is the single-image sanity check, shortened: 150 steps instead of
500, so it finishes in about half a minute.  The full run is
``ramit train --config configs/toy_denoise.json``.
"""

import numpy as np

from ramit import ModelConfig, build_model
from ramit.pipeline.data import Rng, awgn_degrade
from ramit.pipeline.metrics import psnr
from ramit.pipeline.synthetic import test_card
from ramit.pipeline.train import Sample, TrainSchedule, restore, train_loop

clean = test_card(64)
model = build_model(ModelConfig(dim=16, depths=[2, 1, 1, 2], window=8, task="color_dn"), 0)
sched = TrainSchedule(epochs=150, warmup_epochs=10, halve_at=[100, 130], phases=[(0, 64, 1)], lr_base=2e-3)

# train pairs are drawn fresh each step: sigma in [0, 50], random flips
res = train_loop(model, [Sample(hq=clean)], sched, Rng(0, "train"), steps=150,
                 on_step=lambda s, row: s % 25 == 0 and print(f"step {s:3d}  loss {row[3]:.4f}"))

noisy = np.clip(awgn_degrade(clean, 25.0, Rng(123, "eval")), 0, 1)
out = restore(model, noisy, res.norm)
print(f"noisy {psnr(noisy, clean):.2f} dB  ->  restored {psnr(out, clean):.2f} dB")
