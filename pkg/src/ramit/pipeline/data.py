"""Deterministic randomness, degradations, augmentation, cropping and padding.

All images here are ``(C, H, W)`` float arrays.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


class Rng:
    """Named PCG64 stream; normals come from Box-Muller over its uniforms.

    The stream is a pure function of ``(name, seed)`` and is identical on
    every platform numpy supports.  ``fork(k)`` derives an independent
    sub-stream, so per-step work can be replayed without consuming the parent.
    """

    def __init__(self, seed: int = 0, name: str = "main", _path: tuple = ()):
        self.seed = int(seed)
        self.name = name
        self._path = _path
        key = [self.seed, zlib.crc32(name.encode()), *_path]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))

    def fork(self, index: int) -> "Rng":
        return Rng(self.seed, self.name, self._path + (int(index),))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in ``[low, high)``."""
        return int(self._gen.integers(low, high))

    def normal(self, size) -> np.ndarray:
        n = int(np.prod(size))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1]
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return z.reshape(size)


def awgn_degrade(hq: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    """Add N(0, (sigma/255)^2) noise; no clipping."""
    if not 0 <= sigma <= 50:
        raise ValueError(f"noise level {sigma} outside [0, 50]")
    if sigma == 0:
        return hq.copy()
    noise = rng.normal(hq.shape) * (sigma / 255.0)
    return (hq + noise).astype(hq.dtype)


def box_downsample(hq: np.ndarray, r: int) -> np.ndarray:
    """Mean over r x r blocks (not MATLAB bicubic)."""
    c, h, w = hq.shape
    h, w = h // r * r, w // r * r
    return hq[:, :h, :w].reshape(c, h // r, r, w // r, r).mean(axis=(2, 4)).astype(hq.dtype)


# ---------------------------------------------------------------------------
# Dihedral augmentation
# ---------------------------------------------------------------------------


class MisalignedPair(ValueError):
    pass


def dihedral(img: np.ndarray, t: int) -> np.ndarray:
    """Element ``t`` of the 8-element dihedral group: optional flip, then ``t % 4`` quarter turns."""
    out = img[:, :, ::-1] if t >= 4 else img
    return np.ascontiguousarray(np.rot90(out, t % 4, axes=(1, 2)))


def dihedral_inverse(t: int) -> int:
    return t if t >= 4 else (4 - t) % 4


def _check_pair(hq, lq):
    r = hq.shape[1] // lq.shape[1] if lq.shape[1] else 0
    if r < 1 or hq.shape[1] != r * lq.shape[1] or hq.shape[2] != r * lq.shape[2]:
        raise MisalignedPair(f"HQ {hq.shape[1:]} is not an integer multiple of LQ {lq.shape[1:]}")
    return r


def augment(hq: np.ndarray, lq: np.ndarray, rng: Rng, t: int | None = None):
    _check_pair(hq, lq)
    if t is None:
        t = rng.integers(0, 8)
    return dihedral(hq, t), dihedral(lq, t)


class PatchTooLarge(ValueError):
    pass


def crop_patch(hq: np.ndarray, lq: np.ndarray, patch: int, scale: int, rng: Rng):
    _, h, w = lq.shape
    if patch > h or patch > w:
        raise PatchTooLarge(f"patch {patch} larger than LQ {h}x{w}")
    if hq.shape[1] != scale * h or hq.shape[2] != scale * w:
        raise MisalignedPair("HQ size is not scale x LQ size")
    y = rng.integers(0, h - patch + 1)
    x = rng.integers(0, w - patch + 1)
    s = scale
    return (hq[:, s * y:s * (y + patch), s * x:s * (x + patch)],
            lq[:, y:y + patch, x:x + patch])


# ---------------------------------------------------------------------------
# Padding to the model multiple
# ---------------------------------------------------------------------------


def pad_to_multiple(x: np.ndarray, m: int = 32):
    """Mirror-pad bottom/right up to multiples of ``m``; returns ``(padded, (H, W))``."""
    if m < 1:
        raise ValueError("multiple must be >= 1")
    _, h, w = x.shape
    ph, pw = -h % m, -w % m
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="symmetric")
    return x, (h, w)


def crop_back(y: np.ndarray, original: tuple[int, int], scale: int = 1) -> np.ndarray:
    h, w = original
    return y[:, :h * scale, :w * scale]


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass
class NormStats:
    mean: list
    std: list

    def __post_init__(self):
        self.mean = [float(v) for v in self.mean]
        self.std = [float(v) for v in self.std]
        if any(s <= 0 for s in self.std):
            raise ValueError("std must be positive")

    def _col(self, vals, dtype):
        return np.asarray(vals, dtype=dtype)[:, None, None]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return ((x - self._col(self.mean, x.dtype)) / self._col(self.std, x.dtype)).astype(x.dtype)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return (x * self._col(self.std, x.dtype) + self._col(self.mean, x.dtype)).astype(x.dtype)

    @classmethod
    def identity(cls, channels: int) -> "NormStats":
        return cls([0.0] * channels, [1.0] * channels)

    @classmethod
    def from_images(cls, images) -> "NormStats":
        flat = np.concatenate([im.reshape(im.shape[0], -1) for im in images], axis=1).astype(np.float64)
        std = flat.std(axis=1)
        return cls(flat.mean(axis=1).tolist(), np.where(std > 0, std, 1.0).tolist())

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(d["mean"], d["std"])
