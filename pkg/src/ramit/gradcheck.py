"""Central finite-difference checks for every differentiable op and the full model.

Each check contracts the op output with a fixed random tensor to get a
scalar, then compares the tape gradient against central differences in
float64.  The error reported is ``max|analytic - numeric| / max(|analytic|,
|numeric|)`` over all entries of an input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, ChannelAttention, DRamitAttention, ReciprocalCache, SpatialAttention
from .layers import MobiVari, MobiVariConfig
from .model import ModelConfig, build_model
from .tensor import Tape, Tensor

OP_TOL = 1e-3
MODEL_TOL = 1e-2
STEP = 1e-4


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale_ = max(np.abs(analytic).max(initial=0), np.abs(numeric).max(initial=0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0) / scale_)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def check_function(fn: Callable, inputs: list[np.ndarray], rng: np.random.Generator, h: float = STEP) -> float:
    """Worst relative error of d<fn(inputs), R>/d inputs over all inputs."""
    ts = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in inputs]
    with Tape() as tape:
        out = fn(*ts)
        proj = Tensor(rng.standard_normal(out.shape))
        loss = (out * proj).sum()
    grads = tape.gradient(loss, ts)

    def f(arrs):
        with T.no_grad():
            return float((fn(*[Tensor(a) for a in arrs]).data * proj.data).sum())

    worst = 0.0
    base = [np.array(a, dtype=np.float64) for a in inputs]
    for i, a in enumerate(base):
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + h
            fp = f(base)
            a[idx] = orig - h
            fm = f(base)
            a[idx] = orig
            num[idx] = (fp - fm) / (2 * h)
        worst = max(worst, rel_error(grads[i], num))
    return worst


# ---------------------------------------------------------------------------
# Op registry: name -> builder(rng) -> (fn, inputs)
# ---------------------------------------------------------------------------


def _attn_case(rng, kind):
    d, heads, m = 2, 2, 2
    if kind == "spsa":
        mod = SpatialAttention(heads, d, m, rng).astype(np.float64)
        mod.rel_bias.data = rng.standard_normal(mod.rel_bias.shape)
        helper = rng.standard_normal((d, 16))

        def fn(q, k, v, hlp):
            return mod(q, k, v, helper=hlp, shift=1)
    else:
        mod = ChannelAttention(heads, d, rng).astype(np.float64)
        helper = rng.standard_normal((16, 1))

        def fn(q, k, v, hlp):
            return mod(q, k, v, helper=hlp)
    qkv = [rng.standard_normal((heads, d, 4, 4)) for _ in range(3)]
    return fn, qkv + [helper]


def _dramit_case(rng):
    cfg = AttentionConfig(8, heads=4, chsa_ratio=0.25, window=2, shift=True, helper_enabled=True)
    mod = DRamitAttention(cfg, MobiVariConfig(8, 8), rng).astype(np.float64)
    mod.spsa.rel_bias.data = rng.standard_normal(mod.spsa.rel_bias.shape) * 0.1

    def fn(x, prev_ch, prev_sp):
        out, _ = mod(x, ReciprocalCache(prev_ch, prev_sp))
        return out
    return fn, [rng.standard_normal((8, 4, 4)), rng.standard_normal((2, 16)), rng.standard_normal((16, 1))]


def _mobivari_case(rng):
    mod = MobiVari(MobiVariConfig(8, 8, 4, 1.2), rng).astype(np.float64)
    for _, p in mod.named_parameters():
        p.data = rng.standard_normal(p.shape) * 0.5
    return (lambda x: mod(x)), [_away_from_zero(rng, (8, 3, 3))]


OPS: dict[str, Callable] = {
    "add": lambda r: (T.add, [r.standard_normal((3, 4)), r.standard_normal((4,))]),
    "sub": lambda r: (T.sub, [r.standard_normal((3, 4)), r.standard_normal((3, 1))]),
    "mul": lambda r: (T.mul, [r.standard_normal((3, 4)), r.standard_normal((1, 4))]),
    "div": lambda r: (T.div, [r.standard_normal((3, 4)), r.uniform(0.5, 2.0, (3, 4)) * r.choice([-1, 1], (3, 4))]),
    "scale": lambda r: ((lambda a: T.scale(a, -2.5)), [r.standard_normal((5,))]),
    "leaky_relu": lambda r: (T.leaky_relu, [_away_from_zero(r, (4, 5))]),
    "gelu": lambda r: (T.gelu, [r.standard_normal((4, 5)) * 2]),
    "sigmoid": lambda r: (T.sigmoid, [r.standard_normal((4, 5)) * 3]),
    "exp": lambda r: (T.exp, [r.standard_normal((6,))]),
    "abs": lambda r: (T.abs_, [_away_from_zero(r, (6,))]),
    "clamp_min": lambda r: ((lambda a: T.clamp_min(a, 0.0)), [_away_from_zero(r, (6,))]),
    "matmul": lambda r: (T.matmul, [r.standard_normal((2, 3, 4)), r.standard_normal((4, 5))]),
    "softmax": lambda r: ((lambda a: T.softmax(a, -1)), [r.standard_normal((3, 5)) * 2]),
    "layer_norm": lambda r: ((lambda a, g, b: T.layer_norm(a, g, b, axis=0)),
                             [r.standard_normal((4, 3, 2)), r.standard_normal(4), r.standard_normal(4)]),
    "l2_normalize": lambda r: ((lambda a: T.l2_normalize(a, -1)), [r.standard_normal((3, 4))]),
    "conv2d": lambda r: ((lambda x, w, b: T.conv2d(x, w, b, padding=1)),
                         [r.standard_normal((3, 5, 4)), r.standard_normal((4, 3, 3, 3)), r.standard_normal(4)]),
    "conv2d_grouped": lambda r: ((lambda x, w, b: T.conv2d(x, w, b, groups=2)),
                                 [r.standard_normal((4, 3, 3)), r.standard_normal((6, 2, 1, 1)), r.standard_normal(6)]),
    "conv2d_depthwise": lambda r: ((lambda x, w, b: T.conv2d(x, w, b, groups=3, padding=1)),
                                   [r.standard_normal((3, 4, 4)), r.standard_normal((3, 1, 3, 3)), r.standard_normal(3)]),
    "pixel_shuffle": lambda r: ((lambda a: T.pixel_shuffle(a, 2)), [r.standard_normal((8, 2, 3))]),
    "pixel_unshuffle": lambda r: ((lambda a: T.pixel_unshuffle(a, 2)), [r.standard_normal((2, 4, 6))]),
    "roll": lambda r: ((lambda a: T.roll(a, (1, -2), (1, 2))), [r.standard_normal((2, 3, 4))]),
    "transpose": lambda r: ((lambda a: T.transpose(a, (2, 0, 1))), [r.standard_normal((2, 3, 4))]),
    "reshape": lambda r: ((lambda a: T.reshape(a, (4, 6))), [r.standard_normal((2, 3, 4))]),
    "getitem": lambda r: ((lambda a: a[1:, ::2]), [r.standard_normal((3, 4))]),
    "concat": lambda r: ((lambda a, b: T.concat([a, b], axis=0)), [r.standard_normal((2, 3)), r.standard_normal((1, 3))]),
    "take": lambda r: ((lambda a: T.take(a, np.array([[0, 2], [2, 1]]))), [r.standard_normal(3)]),
    "sum": lambda r: ((lambda a: T.sum_(a, axis=1)), [r.standard_normal((3, 4))]),
    "mean": lambda r: ((lambda a: T.mean(a, axis=0, keepdims=True)), [r.standard_normal((3, 4))]),
    "spsa": lambda r: _attn_case(r, "spsa"),
    "chsa": lambda r: _attn_case(r, "chsa"),
    "mobivari": _mobivari_case,
    "dramit_attention": _dramit_case,
}


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.error < self.tolerance


def check_ops(seeds: int = 10, names=None) -> list[CheckResult]:
    results = []
    for name in names or OPS:
        worst = 0.0
        for seed in range(seeds):
            rng = np.random.default_rng(seed)
            fn, inputs = OPS[name](rng)
            worst = max(worst, check_function(fn, inputs, rng))
        results.append(CheckResult(name, worst, OP_TOL))
    return results


def tiny_model_config() -> ModelConfig:
    return ModelConfig(dim=8, depths=[1, 1, 1, 1], window=4, task="color_dn")


def check_model(cfg: ModelConfig | None = None, size: int = 16, seed: int = 0, h: float = 1e-5) -> list[CheckResult]:
    """Directional-derivative check for every parameter tensor and the input.

    For each tensor a random unit direction ``u`` is drawn; the tape gradient
    projected on ``u`` is compared against ``(f(p + h u) - f(p - h u)) / 2h``.
    """
    cfg = cfg or tiny_model_config()
    rng = np.random.default_rng(seed)
    model = build_model(cfg, seed).astype(np.float64)
    # O(1) random weights: at the 0.02-std init some gradients (log_tau,
    # rel_bias) are ~1e-7 and drown in finite-difference noise
    for name, p in model.named_parameters():
        fan_in = int(np.prod(p.shape[1:])) if p.data.ndim == 4 else 1
        p.data = rng.standard_normal(p.shape) / np.sqrt(fan_in)
        if "norm" in name and name.endswith("weight"):
            p.data = 1.0 + 0.1 * p.data
    x = Tensor(rng.standard_normal((cfg.in_channels, size, size)), requires_grad=True)
    proj = rng.standard_normal((cfg.in_channels, size * cfg.upscale, size * cfg.upscale))
    named = list(model.named_parameters())
    with Tape() as tape:
        loss = (model(x) * Tensor(proj)).sum()
    grads = tape.gradient(loss, [p for _, p in named] + [x])

    def f():
        with T.no_grad():
            return float((model(Tensor(x.data)).data * proj).sum())

    results = []
    for (name, p), g in zip(named + [("input", x)], grads):
        u = rng.standard_normal(p.shape)
        u /= np.linalg.norm(u)
        orig = p.data
        p.data = orig + h * u
        fp = f()
        p.data = orig - h * u
        fm = f()
        p.data = orig
        numeric = (fp - fm) / (2 * h)
        analytic = float((g * u).sum())
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-10)
        results.append(CheckResult(name, err, MODEL_TOL))
    return results
