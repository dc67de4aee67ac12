"""Bi-dimensional self-attention: windowed spatial (SPSA) and transposed channel (CHSA).

Both branches share one QKV projection, use scaled-cosine logits with a
per-head temperature, and can modulate their *value* with the previous
block's output of the other branch (the reciprocal helper).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import MobiVari, MobiVariConfig
from .nn import Conv2d, Module
from .tensor import (
    ShapeMismatch,
    Tensor,
    clamp_min,
    concat,
    count_macs,
    exp,
    l2_normalize,
    mac_tag,
    reshape,
    roll,
    scale,
    softmax,
    take,
    transpose,
)

TAU_FLOOR = 0.01
TAU_INIT = 0.1
NORM_EPS = 1e-8


class NotDivisible(ShapeMismatch):
    pass


class MissingBias(ValueError):
    pass


def split_heads(num_heads: int, chsa_ratio: float) -> tuple[int, int]:
    """(spatial, channel) head counts; channel heads = round-half-up(L * ratio)."""
    l_ch = int(math.floor(num_heads * chsa_ratio + 0.5))
    return num_heads - l_ch, l_ch


@dataclass(frozen=True)
class AttentionConfig:
    channels: int
    heads: int = 4
    chsa_ratio: float = 0.25
    window: int = 8
    shift: bool = False
    helper_enabled: bool = True

    def __post_init__(self):
        if self.channels % self.heads:
            raise ShapeMismatch(f"{self.channels} channels not divisible by {self.heads} heads")
        if self.l_sp < 0 or self.l_ch < 0:
            raise ValueError("chsa_ratio must lie in [0, 1]")

    @property
    def l_sp(self) -> int:
        return split_heads(self.heads, self.chsa_ratio)[0]

    @property
    def l_ch(self) -> int:
        return split_heads(self.heads, self.chsa_ratio)[1]

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def shift_size(self) -> int:
        return self.window // 2 if self.shift else 0


@dataclass
class ReciprocalCache:
    """Squeezed branch outputs of the previous block at the same resolution.

    ``prev_chsa`` is ``(C/L, N)`` (CHSA output averaged over its heads);
    ``prev_spsa`` is ``(N, 1)`` (SPSA output averaged over channels).
    """

    prev_chsa: Tensor | None = None
    prev_spsa: Tensor | None = None

    @property
    def empty(self) -> bool:
        return self.prev_chsa is None and self.prev_spsa is None


# ---------------------------------------------------------------------------
# Regrouping
# ---------------------------------------------------------------------------


def window_partition(x: Tensor, h: int, w: int, m: int) -> Tensor:
    """``(N, C)`` tokens in raster order -> ``(num_windows, M*M, C)``."""
    if h % m or w % m:
        raise NotDivisible(f"{h}x{w} not divisible by window {m}")
    c = x.shape[-1]
    t = reshape(x, (h // m, m, w // m, m, c))
    t = transpose(t, (0, 2, 1, 3, 4))
    return reshape(t, ((h // m) * (w // m), m * m, c))


def window_reverse(windows: Tensor, h: int, w: int, m: int) -> Tensor:
    c = windows.shape[-1]
    t = reshape(windows, (h // m, w // m, m, m, c))
    t = transpose(t, (0, 2, 1, 3, 4))
    return reshape(t, (h * w, c))


def cyclic_shift(x: Tensor, dy: int, dx: int) -> Tensor:
    """Toroidal roll of a ``(C, H, W)`` map."""
    return roll(x, (dy, dx), (-2, -1))


def _heads_to_windows(x: Tensor, m: int) -> Tensor:
    # (L, d, H, W) -> (L, nw, M*M, d)
    l, d, h, w = x.shape
    t = reshape(x, (l, d, h // m, m, w // m, m))
    t = transpose(t, (0, 2, 4, 3, 5, 1))
    return reshape(t, (l, (h // m) * (w // m), m * m, d))


def _windows_to_map(x: Tensor, h: int, w: int, m: int) -> Tensor:
    # (L, nw, M*M, d) -> (L*d, H, W)
    l, _, _, d = x.shape
    t = reshape(x, (l, h // m, w // m, m, m, d))
    t = transpose(t, (0, 5, 1, 3, 2, 4))
    return reshape(t, (l * d, h, w))


def relative_position_index(m: int) -> np.ndarray:
    """``(M*M, M*M)`` map from token pairs to rows of a ``(2M-1)^2`` table."""
    ys, xs = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    coords = np.stack([ys.ravel(), xs.ravel()])
    rel = coords[:, :, None] - coords[:, None, :] + (m - 1)
    return rel[0] * (2 * m - 1) + rel[1]


def _inv_tau(log_tau: Tensor) -> Tensor:
    return exp(scale(clamp_min(log_tau, math.log(TAU_FLOOR)), -1.0))


def effective_tau(log_tau: Tensor) -> np.ndarray:
    return np.exp(np.maximum(log_tau.data, np.float32(math.log(TAU_FLOOR))))


# ---------------------------------------------------------------------------
# Branches
# ---------------------------------------------------------------------------


class SpatialAttention(Module):
    """Windowed scaled-cosine attention with a shared relative-position bias."""

    def __init__(self, heads: int, head_dim: int, window: int, rng=None):
        self._heads, self._d, self._m = heads, head_dim, window
        c = heads * head_dim
        self.proj = Conv2d(c, c, 1, rng=rng)
        self.rel_bias = Tensor(np.zeros((2 * window - 1) ** 2, dtype=np.float32), requires_grad=True)
        self.log_tau = Tensor(np.full(heads, math.log(TAU_INIT), dtype=np.float32), requires_grad=True)
        self._index = relative_position_index(window)

    def bias_matrix(self) -> Tensor:
        if self.rel_bias is None:
            raise MissingBias("spatial attention has no relative position table")
        return take(self.rel_bias, self._index)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, helper: Tensor | None = None,
                 shift: int = 0, return_maps: bool = False):
        l, d, h, w = q.shape
        m = self._m
        if (l, d) != (self._heads, self._d) or k.shape != q.shape or v.shape != q.shape:
            raise ShapeMismatch(f"spsa expects ({self._heads},{self._d},H,W) q/k/v, got {q.shape}")
        if h % m or w % m:
            raise NotDivisible(f"{h}x{w} not divisible by window {m}")
        if helper is not None:
            count_macs(l * d * h * w, tag="helper")
            v = v * reshape(helper, (1, d, h, w))
        if shift:
            q, k, v = (roll(t, (-shift, -shift), (2, 3)) for t in (q, k, v))
        qw = l2_normalize(_heads_to_windows(q, m), -1, NORM_EPS)
        kw = l2_normalize(_heads_to_windows(k, m), -1, NORM_EPS)
        vw = _heads_to_windows(v, m)
        logits = qw @ transpose(kw, (0, 1, 3, 2))
        logits = logits * reshape(_inv_tau(self.log_tau), (l, 1, 1, 1)) + self.bias_matrix()
        attn = softmax(logits, -1)
        out = _windows_to_map(attn @ vw, h, w, m)
        if shift:
            out = roll(out, (shift, shift), (1, 2))
        out = self.proj(out)
        return (out, attn) if return_maps else out

    def core_macs(self, h: int, w: int) -> int:
        c = self._heads * self._d
        return 2 * self._m ** 2 * h * w * c + self.proj.macs(h, w)


class ChannelAttention(Module):
    """Transposed attention: each head's channels attend over all tokens."""

    def __init__(self, heads: int, head_dim: int, rng=None):
        self._heads, self._d = heads, head_dim
        c = heads * head_dim
        self.proj = Conv2d(c, c, 1, rng=rng)
        self.log_tau = Tensor(np.full(heads, math.log(TAU_INIT), dtype=np.float32), requires_grad=True)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, helper: Tensor | None = None,
                 return_maps: bool = False):
        l, d, h, w = q.shape
        if (l, d) != (self._heads, self._d) or k.shape != q.shape or v.shape != q.shape:
            raise ShapeMismatch(f"chsa expects ({self._heads},{self._d},H,W) q/k/v, got {q.shape}")
        n = h * w
        q, k, v = (reshape(t, (l, d, n)) for t in (q, k, v))
        if helper is not None:
            count_macs(l * d * n, tag="helper")
            v = v * reshape(helper, (1, 1, n))
        qn = l2_normalize(q, -1, NORM_EPS)
        kn = l2_normalize(k, -1, NORM_EPS)
        logits = (qn @ transpose(kn, (0, 2, 1))) * reshape(_inv_tau(self.log_tau), (l, 1, 1))
        attn = softmax(logits, -1)
        out = self.proj(reshape(attn @ v, (l * d, h, w)))
        return (out, attn) if return_maps else out

    def core_macs(self, h: int, w: int) -> int:
        return 2 * self._heads * self._d ** 2 * h * w + self.proj.macs(h, w)


# ---------------------------------------------------------------------------
# Parallel mixing
# ---------------------------------------------------------------------------


class DRamitAttention(Module):
    """Shared QKV -> (SPSA || CHSA) on a head split -> concat -> MobiVari."""

    def __init__(self, cfg: AttentionConfig, mix: MobiVariConfig | None = None, rng=None):
        self._cfg = cfg
        c, d = cfg.channels, cfg.head_dim
        self.qkv = Conv2d(c, 3 * c, 1, rng=rng)
        self.spsa = SpatialAttention(cfg.l_sp, d, cfg.window, rng) if cfg.l_sp else None
        self.chsa = ChannelAttention(cfg.l_ch, d, rng) if cfg.l_ch else None
        self.mix = MobiVari(mix or MobiVariConfig(c, c), rng)

    def core(self, x: Tensor, cache: ReciprocalCache | None = None):
        """Concatenated branch outputs (pre-MobiVari) and the cache for the next block."""
        cfg = self._cfg
        c, h, w = x.shape
        if c != cfg.channels:
            raise ShapeMismatch(f"expected {cfg.channels} channels, got {c}")
        d, l_sp = cfg.head_dim, cfg.l_sp
        use_helper = cfg.helper_enabled and cache is not None and not cache.empty
        with mac_tag("attention_core"):
            qkv = reshape(self.qkv(x), (cfg.heads, 3 * d, h, w))
            parts = []
            sp = ch = None
            if self.spsa is not None:
                hs = qkv[:l_sp]
                sp = self.spsa(hs[:, :d], hs[:, d:2 * d], hs[:, 2 * d:],
                               helper=cache.prev_chsa if use_helper else None,
                               shift=cfg.shift_size)
                parts.append(sp)
            if self.chsa is not None:
                hc = qkv[l_sp:]
                ch = self.chsa(hc[:, :d], hc[:, d:2 * d], hc[:, 2 * d:],
                               helper=cache.prev_spsa if use_helper else None)
                parts.append(ch)
        if cfg.helper_enabled and sp is not None and ch is not None:
            new_cache = ReciprocalCache(
                prev_chsa=reshape(reshape(ch, (cfg.l_ch, d, h * w)).mean(axis=0), (d, h * w)),
                prev_spsa=reshape(sp.mean(axis=0), (h * w, 1)),
            )
        else:
            new_cache = ReciprocalCache()
        merged = parts[0] if len(parts) == 1 else concat(parts, axis=0)
        return merged, new_cache

    def __call__(self, x: Tensor, cache: ReciprocalCache | None = None):
        merged, new_cache = self.core(x, cache)
        return self.mix(merged), new_cache

    def core_macs(self, h: int, w: int) -> int:
        total = self.qkv.macs(h, w)
        if self.spsa is not None:
            total += self.spsa.core_macs(h, w)
        if self.chsa is not None:
            total += self.chsa.core_macs(h, w)
        return total

    def helper_macs(self, h: int, w: int) -> int:
        cfg = self._cfg
        return cfg.channels * h * w if (cfg.helper_enabled and cfg.l_sp and cfg.l_ch) else 0


def dramit_attention(x: Tensor, module: DRamitAttention, cache: ReciprocalCache | None = None):
    return module(x, cache)


def complexity(kind: str, h: int, w: int, c: int, m: int = 8, heads: int = 1) -> int:
    """Closed-form MACs of a pure attention layer (QKV, products, output projection)."""
    n = h * w
    if kind == "spsa":
        return 4 * n * c * c + 2 * m * m * n * c
    if kind == "chsa":
        if (c * c) % heads:
            raise ValueError("C^2 must be divisible by the head count")
        return 4 * n * c * c + 2 * n * c * c // heads
    raise ValueError(f"unknown attention kind {kind!r}")


def split_complexity(h: int, w: int, c: int, m: int, heads: int, l_ch: int) -> int:
    """MACs of the head-split attention core.

    Shared QKV (3NC^2) plus, for each branch with ``C_b`` channels, its own
    projection (N C_b^2) and its attention products.  Reduces to
    :func:`complexity` when one branch is empty.
    """
    n = h * w
    d = c // heads
    c_sp, c_ch = (heads - l_ch) * d, l_ch * d
    return (3 * n * c * c
            + n * c_sp * c_sp + 2 * m * m * n * c_sp
            + n * c_ch * c_ch + 2 * n * c_ch * d)
