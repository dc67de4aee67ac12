"""How big is RAMiT, and where do its Mult-Adds go?

Counts are analytic; nothing is allocated at full size.  Run with
``python3 demos/budgets.py``.
"""

from ramit import ModelConfig, count_params
from ramit.model import lq_resolution, mult_adds_breakdown

configs = {
    "sr x2": ModelConfig(task="sr", scale=2),
    "sr x4": ModelConfig(task="sr", scale=4),
    "color denoise": ModelConfig(task="color_dn"),
    "slim sr x2": ModelConfig.slim_sr(scale=2),
}

# Mult-Adds are measured for a 1280x720 output.  SR models see a smaller
# input, and every input is padded up to a multiple of 32 first
for name, cfg in configs.items():
    w, h = lq_resolution(cfg, (1280, 720))
    parts = mult_adds_breakdown(cfg)
    print(f"{name:14s} params {count_params(cfg):>9,}   input {w}x{h}   "
          f"Mult-Adds {parts['total'] / 1e9:7.2f}G")

# the attention core itself is a small slice of the total
parts = mult_adds_breakdown(configs["sr x2"])
for key in sorted(parts, key=parts.get, reverse=True):
    print(f"  {key:16s} {parts[key] / 1e9:8.3f}G")

# doubling both sides is ~4x the work, give or take padding
big = mult_adds_breakdown(configs["sr x2"], (2560, 1440))["total"]
print("2560x1440 / 1280x720:", round(big / parts["total"], 3))
