"""Inside one D-RAMiT attention layer.

A window (spatial) branch and a transposed (channel) branch share one QKV
projection.  We look at their attention maps, check two of their
invariances and compare their cost as the image grows.
"""

import numpy as np

from ramit import AttentionConfig, DRamitAttention, ReciprocalCache, Tensor, complexity
from ramit.attention import ChannelAttention, SpatialAttention
from ramit.layers import MobiVariConfig

rng = np.random.default_rng(0)

# -- spatial: softmax over the m*m tokens of each window
sp = SpatialAttention(heads=2, head_dim=4, window=4, rng=rng).astype(np.float64)
q, k, v = (rng.standard_normal((2, 4, 8, 8)) for _ in range(3))
out, maps = sp(Tensor(q), Tensor(k), Tensor(v), return_maps=True)
print("spatial maps", maps.shape, "row sums", np.unique(maps.data.sum(-1).round(12)))

# cosine similarity: rescaling q or k changes nothing
_, maps2 = sp(Tensor(3 * q), Tensor(0.1 * k), Tensor(v), return_maps=True)
print("scale change", np.abs(maps.data - maps2.data).max())

# -- channel: a d x d map per head, so every pixel talks to every pixel
ch = ChannelAttention(heads=2, head_dim=4, rng=rng).astype(np.float64)
out, cmaps = ch(Tensor(q), Tensor(k), Tensor(v), return_maps=True)
print("channel maps", cmaps.shape)

# shuffling pixels leaves the channel map alone
perm = rng.permutation(64)
shuf = [Tensor(t.reshape(2, 4, 64)[..., perm].reshape(2, 4, 8, 8)) for t in (q, k, v)]
_, cmaps2 = ch(*shuf, return_maps=True)
print("pixel shuffle", np.abs(cmaps.data - cmaps2.data).max())

# -- the full layer, with and without the previous layer's helper output
layer = DRamitAttention(AttentionConfig(16, heads=4, chsa_ratio=0.25, window=4, shift=True, helper_enabled=True),
                        MobiVariConfig(16, 16), rng)
x = Tensor(rng.standard_normal((16, 16, 16)).astype(np.float32))
y1, cache = layer(x, ReciprocalCache())
y2, _ = layer(x, cache)
print("helper changes the output by", float(np.abs(y1.data - y2.data).mean()))

# -- cost: linear in pixels for both branches, but with different constants
for side in (64, 128, 256, 512):
    s = complexity("spsa", side, side, 64, 8, 4)
    c = complexity("chsa", side, side, 64, 8, 4)
    print(f"{side:4d}px  spatial {s / 1e6:9.1f}M  channel {c / 1e6:9.1f}M")
