"""Parameter containers, initializers and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DEFAULT_DTYPE, ShapeMismatch, Tensor, conv2d, layer_norm


class Module:
    """Attribute-registered parameters and submodules with dotted names."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        """Replace parameter values by name; shapes must already agree."""
        for name, p in self.named_parameters():
            arr = arrays[name]
            if arr.shape != p.shape:
                raise ShapeMismatch(f"{name}: {arr.shape} != {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)

    def astype(self, dtype):
        """Cast every parameter in place (float64 for gradient checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_(self):
        for _, p in self.named_parameters():
            p.data = np.zeros_like(p.data)
        return self


def trunc_normal(rng: np.random.Generator | None, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated at two standard deviations by resampling."""
    if rng is None:
        return np.zeros(shape, dtype=DEFAULT_DTYPE)
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(DEFAULT_DTYPE)


def _param(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=DEFAULT_DTYPE), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 1, groups: int = 1, rng=None):
        if cin % groups or cout % groups:
            from .tensor import GroupMismatch
            raise GroupMismatch(f"channels {cin}->{cout} not divisible by groups={groups}")
        self.cin, self.cout, self.k, self.groups = cin, cout, k, groups
        self.weight = _param(trunc_normal(rng, (cout, cin // groups, k, k)))
        self.bias = _param(np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, groups=self.groups, padding=self.k // 2)

    def macs(self, h: int, w: int) -> int:
        return self.cout * (self.cin // self.groups) * self.k * self.k * h * w


class LayerNorm(Module):
    """Channel-axis layer norm for ``(C, ...)`` maps."""

    def __init__(self, c: int):
        self.weight = _param(np.ones(c))
        self.bias = _param(np.zeros(c))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias, eps=1e-5, axis=0)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, lr: float):
    """Bias-corrected Adam; rebinds each ``param.data`` (no in-place writes)."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params) or len(grads) != len(params):
        raise ShapeMismatch("optimizer state does not match parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeMismatch(f"gradient/state shape mismatch for parameter {i}: {g.shape} vs {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m = b1 * state.m[i] + (1 - b1) * g
        v = b2 * state.v[i] + (1 - b2) * g * g
        state.m[i], state.v[i] = m, v
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - step).astype(p.dtype, copy=False)
