"""Convolutional glue: MobiVari, feed-forward network, downsizing, shallow conv."""

from __future__ import annotations

from dataclasses import dataclass

from .nn import Conv2d, Module
from .tensor import GroupMismatch, ShapeMismatch, Tensor, gelu, leaky_relu, pixel_unshuffle


class OddDimension(ShapeMismatch):
    pass


def expanded_channels(cin: int, ratio: float, groups: int) -> int:
    """``floor(cin * ratio)`` snapped down to a multiple of ``groups``."""
    ce = int(cin * ratio) // groups * groups
    if ce < groups:
        raise GroupMismatch(f"expansion of {cin} by {ratio} leaves fewer than {groups} channels")
    return ce


@dataclass(frozen=True)
class MobiVariConfig:
    in_channels: int
    out_channels: int | None = None
    groups: int = 4
    ratio: float = 1.2

    @property
    def expanded(self) -> int:
        return expanded_channels(self.in_channels, self.ratio, self.groups)


class MobiVari(Module):
    """Grouped 1x1 expand -> LeakyReLU -> depthwise 3x3 (+skip) -> LeakyReLU -> 1x1 (+skip).

    The outer skip exists only when input and output channel counts match.
    """

    def __init__(self, cfg: MobiVariConfig, rng=None):
        cin = cfg.in_channels
        cout = cfg.out_channels or cin
        if cin % cfg.groups:
            raise GroupMismatch(f"{cin} input channels not divisible by group size {cfg.groups}")
        ce = cfg.expanded
        self._cfg = cfg
        self._cin, self._cout, self._ce = cin, cout, ce
        self.expand = Conv2d(cin, ce, 1, groups=cfg.groups, rng=rng)
        self.dw = Conv2d(ce, ce, 3, groups=ce, rng=rng)
        self.pw = Conv2d(ce, cout, 1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        x1 = leaky_relu(self.expand(x))
        h = leaky_relu(self.dw(x1) + x1)
        out = self.pw(h)
        return out + x if self._cout == self._cin else out

    def macs(self, h: int, w: int) -> int:
        return self.expand.macs(h, w) + self.dw.macs(h, w) + self.pw.macs(h, w)


def mobivari(x: Tensor, cfg: MobiVariConfig, rng=None) -> Tensor:
    return MobiVari(cfg, rng)(x)


@dataclass(frozen=True)
class FfnConfig:
    channels: int
    ratio: float = 2.0

    @property
    def hidden(self) -> int:
        return int(self.channels * self.ratio)


class FeedForward(Module):
    """Pointwise linear C->hidden, GELU, linear hidden->C over a ``(C, H, W)`` map."""

    def __init__(self, cfg: FfnConfig, rng=None):
        self._c = cfg.channels
        self.fc1 = Conv2d(cfg.channels, cfg.hidden, 1, rng=rng)
        self.fc2 = Conv2d(cfg.hidden, cfg.channels, 1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[0] != self._c:
            raise ShapeMismatch(f"ffn expects {self._c} channels, got {x.shape[0]}")
        return self.fc2(gelu(self.fc1(x)))

    def macs(self, h: int, w: int) -> int:
        return self.fc1.macs(h, w) + self.fc2.macs(h, w)


class PatchMerge(Module):
    """2x2 space-to-channel gather followed by MobiVari 4C -> C."""

    def __init__(self, c: int, groups: int = 4, ratio: float = 1.2, rng=None):
        self.mix = MobiVari(MobiVariConfig(4 * c, c, groups, ratio), rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise OddDimension(f"cannot halve spatial size {x.shape[1:]}")
        return self.mix(pixel_unshuffle(x, 2))

    def macs(self, h: int, w: int) -> int:
        return self.mix.macs(h // 2, w // 2)


class Shallow(Module):
    def __init__(self, cin: int, c: int, rng=None):
        self.conv = Conv2d(cin, c, 3, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(x)

    def macs(self, h: int, w: int) -> int:
        return self.conv.macs(h, w)
