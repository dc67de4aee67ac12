import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ramit.layers import (
    FeedForward,
    FfnConfig,
    MobiVari,
    MobiVariConfig,
    OddDimension,
    PatchMerge,
    Shallow,
    expanded_channels,
)
from ramit.tensor import GroupMismatch, Tensor


def test_mobivari_param_count():
    mv = MobiVari(MobiVariConfig(64, 64, 4, 1.2))
    assert mv._ce == 76
    assert mv.num_params() == 16 * 76 + 76 + 9 * 76 + 76 + 76 * 64 + 64 == 6980


@given(st.integers(1, 64), st.sampled_from([1, 2, 4]), st.sampled_from([1.0, 1.2, 2.0]))
def test_expanded_channels_rounds_down_to_group(cin, g, e):
    if int(cin * e) < g:
        with pytest.raises(GroupMismatch):
            expanded_channels(cin, e, g)
        return
    ce = expanded_channels(cin, e, g)
    assert ce % g == 0 and ce <= cin * e < ce + g


def test_zero_mobivari_is_identity_or_zero(rng):
    x = Tensor(rng.standard_normal((8, 5, 5)))
    same = MobiVari(MobiVariConfig(8, 8))
    same.zero_()
    np.testing.assert_array_equal(same(x).data, x.data)
    narrow = MobiVari(MobiVariConfig(8, 4))
    narrow.zero_()
    np.testing.assert_array_equal(narrow(x).data, np.zeros((4, 5, 5)))


def test_mobivari_group_mismatch():
    with pytest.raises(GroupMismatch):
        MobiVari(MobiVariConfig(6, 6, 4))


def test_mobivari_shape(rng):
    out = MobiVari(MobiVariConfig(8, 12), rng)(Tensor(rng.standard_normal((8, 3, 7))))
    assert out.shape == (12, 3, 7)


def test_ffn_zero_params_and_shape(rng):
    ffn = FeedForward(FfnConfig(64))
    assert ffn.num_params() == 16_576
    x = Tensor(rng.standard_normal((64, 4, 4)))
    np.testing.assert_array_equal(ffn(x).data, np.zeros((64, 4, 4)))
    assert FeedForward(FfnConfig(64), rng)(x).shape == (64, 4, 4)


def test_patch_merge_shapes(rng):
    pm = PatchMerge(64, rng=rng)
    assert pm(Tensor(np.zeros((64, 16, 16), dtype=np.float32))).shape == (64, 8, 8)
    x = pm(pm(Tensor(np.zeros((64, 32, 32), dtype=np.float32))))
    assert x.shape == (64, 8, 8)
    with pytest.raises(OddDimension):
        pm(Tensor(np.zeros((64, 5, 6), dtype=np.float32)))


def test_patch_merge_averaging_keeps_constant():
    c = 8
    pm = PatchMerge(c, groups=4, ratio=1.2).astype(np.float64)
    mv = pm.mix
    ce, per_group = mv._ce, (4 * c) // 4
    mv.zero_()
    mv.expand.weight.data[:] = 1.0 / per_group
    mv.pw.weight.data[:] = 1.0 / ce
    out = pm(Tensor(np.full((c, 6, 6), 0.7)))
    np.testing.assert_allclose(out.data, 0.7, atol=1e-12)


def test_shallow(rng):
    sh = Shallow(3, 64, rng)
    assert sh.num_params() == 1792
    assert sh(Tensor(np.zeros((3, 8, 8), dtype=np.float32))).shape == (64, 8, 8)
    assert Shallow(1, 64, rng)(Tensor(np.zeros((1, 8, 8), dtype=np.float32))).shape == (64, 8, 8)
