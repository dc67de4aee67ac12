"""Four-stage RAMiT assembly, budgets, and gradient attribution."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionConfig, DRamitAttention, ReciprocalCache
from .layers import FeedForward, FfnConfig, MobiVari, MobiVariConfig, PatchMerge, Shallow
from .nn import Conv2d, LayerNorm, Module
from .tensor import ShapeMismatch, Tape, Tensor, concat, pixel_shuffle

TASKS = ("sr", "color_dn", "gray_dn", "lle", "derain")


class BadInputShape(ShapeMismatch):
    pass


class InvalidScale(ValueError):
    pass


class RegionOutOfBounds(ValueError):
    pass


@dataclass
class ModelConfig:
    dim: int = 64
    depths: list = field(default_factory=lambda: [6, 4, 4, 6])
    heads: list = field(default_factory=lambda: [4, 4, 4, 4])
    chsa_ratio: float = 0.25
    window: int = 8
    task: str = "sr"
    scale: int = 2
    helper_enabled: bool | None = None
    ffn_ratio: float = 2.0
    mv_groups: int = 4
    mv_ratio: float = 1.2
    # bottleneck / H-RAMi MobiVari overrides (slim presets)
    mix_groups: int | None = None
    mix_ratio: float | None = None
    # "ramit" is the full network; "block" is a single-block toy used for locality checks
    arch: str = "ramit"

    def __post_init__(self):
        self.depths = list(self.depths)
        self.heads = list(self.heads)
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.arch not in ("ramit", "block"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.task == "sr" and self.scale not in (2, 3, 4):
            raise InvalidScale(f"super-resolution scale must be 2, 3 or 4, got {self.scale}")
        if self.arch == "ramit" and (len(self.depths) != 4 or len(self.heads) != 4):
            raise ValueError("depths and heads need four entries")

    @property
    def helper(self) -> bool:
        if self.helper_enabled is not None:
            return bool(self.helper_enabled)
        return self.task in ("sr", "lle")

    @property
    def in_channels(self) -> int:
        return 1 if self.task == "gray_dn" else 3

    @property
    def upscale(self) -> int:
        return self.scale if self.task == "sr" else 1

    @property
    def unit(self) -> int:
        """Input sides must be multiples of this (window times total downsizing)."""
        return self.window * 4 if self.arch == "ramit" else self.window

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def slim_sr(cls, **kw) -> "ModelConfig":
        base = dict(dim=48, depths=[8, 2, 2, 8], mix_groups=1, mix_ratio=2.0, task="sr")
        return cls(**{**base, **kw})

    @classmethod
    def slim_lle(cls, **kw) -> "ModelConfig":
        base = dict(dim=48, depths=[4, 2, 2, 4], mix_groups=3, task="lle")
        return cls(**{**base, **kw})


def _attn_cfg(cfg: ModelConfig, stage: int, shift: bool) -> AttentionConfig:
    return AttentionConfig(cfg.dim, cfg.heads[stage], cfg.chsa_ratio, cfg.window, shift, cfg.helper)


# ---------------------------------------------------------------------------
# Blocks and stages
# ---------------------------------------------------------------------------


class DRamitBlock(Module):
    """Post-norm transformer block: ``LN(x + attn)``, then ``LN(x1 + ffn(x1))``."""

    def __init__(self, acfg: AttentionConfig, cfg: ModelConfig, rng=None):
        c = acfg.channels
        self.attn = DRamitAttention(acfg, MobiVariConfig(c, c, cfg.mv_groups, cfg.mv_ratio), rng)
        self.norm1 = LayerNorm(c)
        self.ffn = FeedForward(FfnConfig(c, cfg.ffn_ratio), rng)
        self.norm2 = LayerNorm(c)

    def __call__(self, x: Tensor, cache: ReciprocalCache | None = None):
        a, new_cache = self.attn(x, cache)
        x1 = self.norm1(x + a)
        out = self.norm2(x1 + self.ffn(x1))
        return out, new_cache, a

    def macs(self, h: int, w: int) -> int:
        return (self.attn.core_macs(h, w) + self.attn.helper_macs(h, w)
                + self.attn.mix.macs(h, w) + self.ffn.macs(h, w))


def dramit_block(x: Tensor, block: DRamitBlock, cache: ReciprocalCache | None = None):
    return block(x, cache)


@dataclass
class StageOutput:
    features: Tensor
    tapped_attention: Tensor


class Stage(Module):
    def __init__(self, depth: int, stage: int, cfg: ModelConfig, rng=None):
        if depth < 1:
            raise ValueError("every stage needs at least one block")
        self.blocks = [DRamitBlock(_attn_cfg(cfg, stage, shift=bool(i % 2)), cfg, rng) for i in range(depth)]

    def __call__(self, x: Tensor) -> StageOutput:
        cache = ReciprocalCache()
        tapped = None
        for blk in self.blocks:
            x, cache, tapped = blk(x, cache)
        return StageOutput(x, tapped)

    def macs(self, h: int, w: int) -> int:
        # first block of a stage never runs the helper
        total = sum(b.macs(h, w) for b in self.blocks)
        return total - self.blocks[0].attn.helper_macs(h, w)

    def core_macs(self, h: int, w: int) -> int:
        return sum(b.attn.core_macs(h, w) for b in self.blocks)


def _multiscale_channels(c: int) -> int:
    return 2 * c + -(-c // 4) + -(-c // 16)


def _shuffle_up(x: Tensor, r: int) -> Tensor:
    # zero channels top the count up to a multiple of r*r (only when C % r^2 != 0)
    c, h, w = x.shape
    extra = -c % (r * r)
    if extra:
        x = concat([x, Tensor(np.zeros((extra, h, w), dtype=x.dtype))], axis=0)
    return pixel_shuffle(x, r)


class MultiScaleMix(Module):
    """Shuffle the half- and quarter-resolution inputs up, concatenate, MobiVari to C."""

    def __init__(self, cfg: ModelConfig, rng=None):
        c = cfg.dim
        cin = _multiscale_channels(c)
        # group size falls back to a divisor of the concat width (e.g. 37 channels at C=16)
        groups = math.gcd(cin, cfg.mix_groups or cfg.mv_groups)
        ratio = cfg.mix_ratio or cfg.mv_ratio
        self.mix = MobiVari(MobiVariConfig(cin, c, groups, ratio), rng)

    def __call__(self, full_a: Tensor, half: Tensor, quarter: Tensor, full_b: Tensor, order="abhq"):
        c, h, w = full_a.shape
        if half.shape != (c, h // 2, w // 2) or quarter.shape != (c, h // 4, w // 4) or full_b.shape != (c, h, w):
            raise ShapeMismatch("multi-scale inputs have inconsistent shapes")
        up2 = _shuffle_up(half, 2)
        up4 = _shuffle_up(quarter, 4)
        parts = [full_a, full_b, up2, up4] if order == "abhq" else [full_a, up2, up4, full_b]
        return self.mix(concat(parts, axis=0))

    def macs(self, h: int, w: int) -> int:
        return self.mix.macs(h, w)


class Bottleneck(MultiScaleMix):
    def __call__(self, xs, s1, s2, s3):
        return super().__call__(xs, s2, s3, s1, order="abhq")


class HRAMi(MultiScaleMix):
    def __call__(self, a1, a2, a3, a4):
        return super().__call__(a1, a2, a3, a4, order="ahqb")


class Reconstruction(Module):
    """Two MobiVari layers, 3x3 conv, and pixel shuffle for super-resolution."""

    def __init__(self, cfg: ModelConfig, rng=None):
        c = cfg.dim
        self._r = cfg.upscale
        self.pre = [MobiVari(MobiVariConfig(c, c, cfg.mv_groups, cfg.mv_ratio), rng) for _ in range(2)]
        self.conv = Conv2d(c, cfg.in_channels * self._r ** 2, 3, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        for mv in self.pre:
            x = mv(x)
        out = self.conv(x)
        return pixel_shuffle(out, self._r) if self._r > 1 else out

    def macs(self, h: int, w: int) -> int:
        return sum(mv.macs(h, w) for mv in self.pre) + self.conv.macs(h, w)


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------


class RAMiT(Module):
    def __init__(self, cfg: ModelConfig, seed: int | None = 0):
        rng = None if seed is None else np.random.default_rng(seed)
        self._cfg = cfg
        c = cfg.dim
        self.shallow = Shallow(cfg.in_channels, c, rng)
        self.stage1 = Stage(cfg.depths[0], 0, cfg, rng)
        self.down1 = PatchMerge(c, cfg.mv_groups, cfg.mv_ratio, rng)
        self.stage2 = Stage(cfg.depths[1], 1, cfg, rng)
        self.down2 = PatchMerge(c, cfg.mv_groups, cfg.mv_ratio, rng)
        self.stage3 = Stage(cfg.depths[2], 2, cfg, rng)
        self.bottleneck = Bottleneck(cfg, rng)
        self.stage4 = Stage(cfg.depths[3], 3, cfg, rng)
        self.hrami = HRAMi(cfg, rng)
        self.recon = Reconstruction(cfg, rng)
        # test hook: replaces the H-RAMi output when set
        self._hrami_override = None

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    def __call__(self, lq: Tensor) -> Tensor:
        cfg = self._cfg
        if lq.ndim != 3 or lq.shape[0] != cfg.in_channels:
            raise BadInputShape(f"expected ({cfg.in_channels}, H, W) input, got {lq.shape}")
        _, h, w = lq.shape
        if h % cfg.unit or w % cfg.unit:
            raise BadInputShape(f"input {h}x{w} must be a multiple of {cfg.unit}; pad first")
        xs = self.shallow(lq)
        o1 = self.stage1(xs)
        o2 = self.stage2(self.down1(o1.features))
        o3 = self.stage3(self.down2(o2.features))
        b = self.bottleneck(xs, o1.features, o2.features, o3.features)
        o4 = self.stage4(b)
        if self._hrami_override is not None:
            mixed = self._hrami_override
        else:
            mixed = self.hrami(o1.tapped_attention, o2.tapped_attention,
                               o3.tapped_attention, o4.tapped_attention)
        res = self.recon(o4.features * mixed + xs)
        return res if cfg.task == "sr" else res + lq

    def stage_resolutions(self, h: int, w: int):
        return [(h, w), (h // 2, w // 2), (h // 4, w // 4), (h, w)]

    def mult_adds(self, h: int, w: int) -> dict:
        stages = [self.stage1, self.stage2, self.stage3, self.stage4]
        res = self.stage_resolutions(h, w)
        out = {
            "shallow": self.shallow.macs(h, w),
            "stages": sum(s.macs(*r) for s, r in zip(stages, res)),
            "downsizing": self.down1.macs(h, w) + self.down2.macs(h // 2, w // 2),
            "bottleneck": self.bottleneck.macs(h, w),
            "hrami": self.hrami.macs(h, w),
            "reconstruction": self.recon.macs(h, w),
            "attention_core": sum(s.core_macs(*r) for s, r in zip(stages, res)),
            "helper": sum(b.attn.helper_macs(*r) for s, r in zip(stages, res) for b in s.blocks[1:]),
        }
        out["total"] = sum(out[k] for k in ("shallow", "stages", "downsizing", "bottleneck", "hrami", "reconstruction"))
        return out


class BlockToy(Module):
    """1x1 lift -> one D-RAMiT block (no shift) -> 1x1 head -> + input.

    Pointwise lift/head add no spatial reach, so the receptive field is the
    block's own: the attention window(s) plus the depthwise halo.
    """

    def __init__(self, cfg: ModelConfig, seed: int | None = 0):
        rng = None if seed is None else np.random.default_rng(seed)
        self._cfg = cfg
        self.lift = Conv2d(cfg.in_channels, cfg.dim, 1, rng=rng)
        self.block = DRamitBlock(_attn_cfg(cfg, 0, shift=False), cfg, rng)
        self.head = Conv2d(cfg.dim, cfg.in_channels, 1, rng=rng)

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    def __call__(self, lq: Tensor) -> Tensor:
        cfg = self._cfg
        if lq.ndim != 3 or lq.shape[0] != cfg.in_channels or lq.shape[1] % cfg.unit or lq.shape[2] % cfg.unit:
            raise BadInputShape(f"bad input shape {lq.shape} for window {cfg.window}")
        out, _, _ = self.block(self.lift(lq))
        return self.head(out) + lq

    def mult_adds(self, h: int, w: int) -> dict:
        core = self.block.attn.core_macs(h, w)
        total = self.lift.macs(h, w) + self.block.macs(h, w) + self.head.macs(h, w)
        return {"attention_core": core, "helper": 0, "total": total}


def build_model(cfg: ModelConfig, seed: int | None = 0):
    return RAMiT(cfg, seed) if cfg.arch == "ramit" else BlockToy(cfg, seed)


def model_forward(model, lq: Tensor) -> Tensor:
    return model(lq)


# ---------------------------------------------------------------------------
# Budgets
# ---------------------------------------------------------------------------


def count_params(cfg: ModelConfig) -> int:
    return build_model(cfg, seed=None).num_params()


def lq_resolution(cfg: ModelConfig, hq: tuple[int, int]) -> tuple[int, int]:
    """LQ (width, height) for an HQ size, padded up to the model's multiple."""
    w, h = hq
    r = cfg.upscale
    u = cfg.unit
    lw, lh = w // r, h // r
    return -(-lw // u) * u, -(-lh // u) * u


def mult_adds_breakdown(cfg: ModelConfig, hq: tuple[int, int] = (1280, 720)) -> dict:
    w, h = lq_resolution(cfg, hq)
    return build_model(cfg, seed=None).mult_adds(h, w)


def count_mult_adds(cfg: ModelConfig, hq: tuple[int, int] = (1280, 720)) -> int:
    """Multiply-accumulates for one HQ ``(width, height)`` image, counted at the padded LQ size."""
    return mult_adds_breakdown(cfg, hq)["total"]


# ---------------------------------------------------------------------------
# Attribution
# ---------------------------------------------------------------------------


def attribution_map(model, lq, region: tuple[int, int, int, int]) -> np.ndarray:
    """Per-pixel input-gradient magnitude for the summed output inside ``region``.

    ``region`` is ``(x, y, w, h)`` in output coordinates.  The map is the
    channel-wise L2 norm of d(sum out[region]) / d(input), scaled to max 1.
    """
    data = lq.data if isinstance(lq, Tensor) else np.asarray(lq)
    dtype = model.parameters()[0].dtype
    x = Tensor(np.array(data, dtype=dtype), requires_grad=True)
    with Tape() as tape:
        out = model(x)
        rx, ry, rw, rh = region
        _, oh, ow = out.shape
        if rw < 1 or rh < 1 or rx < 0 or ry < 0 or rx + rw > ow or ry + rh > oh:
            raise RegionOutOfBounds(f"region {region} outside output {ow}x{oh}")
        target = out[:, ry:ry + rh, rx:rx + rw].sum()
    (g,) = tape.gradient(target, [x])
    heat = np.sqrt((g.astype(np.float64) ** 2).sum(axis=0))
    peak = heat.max()
    return heat / peak if peak > 0 else heat


def instrumented_macs(model, lq: Tensor) -> dict:
    """Run a forward pass under a MAC counter and return its tallies."""
    from .tensor import MacCounter, no_grad
    with MacCounter() as counter, no_grad():
        model(lq)
    return {"total": counter.total, **counter.by_tag}


__all__ = [
    "ModelConfig", "RAMiT", "BlockToy", "DRamitBlock", "Stage", "StageOutput", "Bottleneck", "HRAMi",
    "Reconstruction", "build_model", "model_forward", "count_params", "count_mult_adds",
    "mult_adds_breakdown", "attribution_map", "instrumented_macs",
]
