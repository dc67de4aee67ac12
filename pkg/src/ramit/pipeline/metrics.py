"""PSNR, SSIM and BT.601 luma."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NotRgb(ValueError):
    pass


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """``(3, H, W)`` in [0, 1] -> ``(1, H, W)`` studio-swing luma on the [0, 255] scale."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise NotRgb(f"expected (3, H, W), got {img.shape}")
    r, g, b = img.astype(np.float64)
    return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b)[None]


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Returns ``math.inf`` for identical inputs."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    return np.einsum("ijkl,kl->ij", sliding_window_view(x, win.shape), win)


def ssim_plane(a: np.ndarray, b: np.ndarray, peak: float = 1.0, win=None,
               k1: float = 0.01, k2: float = 0.03) -> float:
    win = gaussian_window() if win is None else win
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mu_a, mu_b = _filter(a, win), _filter(b, win)
    saa = _filter(a * a, win) - mu_a ** 2
    sbb = _filter(b * b, win) - mu_b ** 2
    sab = _filter(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows, averaged over channels."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return ssim_plane(a, b, peak)
    if min(a.shape[1:]) < 11:
        raise ValueError("images must be at least 11x11 for SSIM")
    return float(np.mean([ssim_plane(a[c], b[c], peak) for c in range(a.shape[0])]))
