"""Which input pixels can a single output pixel see?

With spatial heads only, the answer is: the window it sits in (plus the
shifted neighbour).  Add one channel head and the whole image lights up,
faintly.  Writes two PGM heatmaps next to this script.
"""

import os

import numpy as np

from ramit import ModelConfig, build_model
from ramit.model import attribution_map
from ramit.pipeline.netpbm import ImageBuffer, save_image

here = os.path.dirname(os.path.abspath(__file__))
lq = np.random.default_rng(0).random((3, 32, 32))
region = (13, 13, 2, 2)  # x, y, w, h

for name, ratio in (("spatial_only", 0.0), ("with_channel", 0.25)):
    cfg = ModelConfig(dim=16, window=8, task="color_dn", arch="block", chsa_ratio=ratio)
    model = build_model(cfg, 0).astype(np.float64)
    heat = attribution_map(model, lq, region)
    heat = heat / heat.sum()
    tiles = heat.reshape(4, 8, 4, 8).sum(axis=(1, 3))
    print(name)
    print(np.array2string(tiles, formatter={"float_kind": lambda t: f"{t:.1e}"}))
    save_image(ImageBuffer.from_array(heat[None] / heat.max()), os.path.join(here, f"{name}.pgm"))
