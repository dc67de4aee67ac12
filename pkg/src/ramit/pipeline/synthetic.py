"""Procedural test images (no external data needed)."""

from __future__ import annotations

import numpy as np


def test_card(size: int = 64, channels: int = 3, seed: int = 0) -> np.ndarray:
    """Smooth gradients, a disc, a bar pattern and soft blobs in [0, 1], shape ``(C, size, size)``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    planes = []
    for c in range(channels):
        base = 0.25 + 0.5 * (c + 1) / (channels + 1) * xx + 0.2 * yy * (1 - c / max(channels, 1))
        cx, cy = rng.uniform(0.3, 0.7, 2)
        disc = ((xx - cx) ** 2 + (yy - cy) ** 2) < 0.05
        bars = (np.floor(xx * 8) % 2 == 0) & (yy > 0.75)
        blobs = sum(0.15 * np.exp(-((xx - u) ** 2 + (yy - v) ** 2) / 0.01) for u, v in rng.uniform(0, 1, (3, 2)))
        planes.append(base + 0.3 * disc - 0.2 * bars + blobs)
    return np.clip(np.stack(planes), 0.0, 1.0).astype(np.float32)
