import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ramit import tensor as T
from ramit.nn import AdamState, Conv2d, adam_step
from ramit.tensor import Tape, Tensor


def brute_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def brute_conv(x, w, bias, groups, pad):
    c, h, wd = x.shape
    co, cig, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    out = np.zeros((co, oh, ow))
    per_out = co // groups
    for o in range(co):
        g = o // per_out
        for ci in range(cig):
            for i in range(oh):
                for j in range(ow):
                    out[o, i, j] += (xp[g * cig + ci, i:i + k, j:j + k] * w[o, ci]).sum()
        out[o] += bias[o]
    return out


# -- elementwise ------------------------------------------------------------

def test_add_example():
    np.testing.assert_array_equal(T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4, 6])


def test_leaky_relu_example():
    np.testing.assert_allclose(T.leaky_relu(Tensor([-1.0, 2.0])).data, [-0.01, 2.0], rtol=1e-6)


def test_mul_by_scalar_zero():
    out = T.mul(Tensor(np.arange(4.0).reshape(2, 2)), 0.0)
    np.testing.assert_array_equal(out.data, np.zeros((2, 2)))


def test_div_by_zero_raises():
    with pytest.raises(T.DivisionByZero):
        T.div(Tensor([1.0]), Tensor([0.0]))


def test_incompatible_shapes_raise():
    with pytest.raises(T.ShapeMismatch):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


@given(hnp.arrays(np.float64, hnp.array_shapes(max_dims=3, max_side=4),
                  elements=st.floats(-10, 10)))
def test_add_commutes_and_matches_numpy(a):
    b = np.flip(a).copy()
    np.testing.assert_array_equal(T.add(Tensor(a), Tensor(b)).data, T.add(Tensor(b), Tensor(a)).data)
    np.testing.assert_array_equal(T.add(Tensor(a), Tensor(b)).data, a + b)


# -- matmul -----------------------------------------------------------------

def test_matmul_identity_and_orthogonal():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), m).data, m.data)
    np.testing.assert_array_equal(T.matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [1.0]])).data, [[0.0]])


@pytest.mark.parametrize("seed", range(5))
def test_matmul_matches_triple_loop(seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((3, 3)), r.standard_normal((3, 3))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, brute_matmul(a, b), atol=1e-6)


def test_matmul_inner_mismatch():
    with pytest.raises(T.ShapeMismatch):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_counts_macs():
    with T.MacCounter() as mc:
        T.matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((4, 5))))
    assert mc.total == 2 * 3 * 4 * 5


# -- softmax / norms --------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor(np.zeros(4))).data, [0.25] * 4)
    np.testing.assert_allclose(T.softmax(Tensor([math.log(2), 0.0])).data, [2 / 3, 1 / 3], rtol=1e-6)
    big = T.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, [1.0, 0.0])


def test_softmax_bad_axis():
    with pytest.raises(T.InvalidAxis):
        T.softmax(Tensor(np.zeros((2, 2))), axis=3)


@given(hnp.arrays(np.float64, (3, 7), elements=st.floats(-50, 50)))
def test_softmax_rows_are_stochastic(x):
    y = T.softmax(Tensor(x), -1).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-6)


def test_layer_norm_examples():
    one, zero = Tensor(np.ones(3)), Tensor(np.zeros(3))
    out = T.layer_norm(Tensor([1.0, 2.0, 3.0]), one, zero, axis=0).data
    np.testing.assert_allclose(out, [-1.22474, 0.0, 1.22474], atol=1e-4)
    np.testing.assert_array_equal(T.layer_norm(Tensor(np.full(3, 7.0)), one, zero, axis=0).data, np.zeros(3))
    beta = Tensor([0.5, -1.0, 2.0])
    out = T.layer_norm(Tensor([4.0, 1.0, -3.0]), Tensor(np.zeros(3)), beta, axis=0).data
    np.testing.assert_array_equal(out, beta.data)


def test_l2_normalize_unit_rows(rng):
    y = T.l2_normalize(Tensor(rng.standard_normal((4, 6))), -1).data
    np.testing.assert_allclose(np.linalg.norm(y, axis=-1), 1.0, rtol=1e-7)


# -- convolution ------------------------------------------------------------

def test_conv_permutation_weights():
    x = np.arange(3 * 2 * 2, dtype=np.float64).reshape(3, 2, 2)
    perm = [2, 0, 1]
    w = np.zeros((3, 3, 1, 1))
    for o, i in enumerate(perm):
        w[o, i] = 1.0
    out = T.conv2d(Tensor(x), Tensor(w)).data
    np.testing.assert_array_equal(out, x[perm])


def test_depthwise_ones_on_one_hot():
    x = np.zeros((1, 3, 3))
    x[0, 1, 1] = 1.0
    out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), groups=1, padding=1).data
    np.testing.assert_array_equal(out, np.ones((1, 3, 3)))
    x = np.zeros((2, 3, 3))
    x[:, 0, 0] = 1.0
    out = T.conv2d(Tensor(x), Tensor(np.ones((2, 1, 3, 3))), groups=2, padding=1).data
    expect = np.zeros((3, 3))
    expect[:2, :2] = 1.0
    np.testing.assert_array_equal(out, np.stack([expect, expect]))


@pytest.mark.parametrize("groups,cin,cout,k,pad", [(1, 3, 4, 3, 1), (2, 4, 6, 1, 0), (3, 3, 3, 3, 1), (1, 2, 2, 3, 0)])
def test_conv_matches_direct_oracle(groups, cin, cout, k, pad):
    r = np.random.default_rng(cin * 10 + cout)
    x = r.standard_normal((cin, 5, 4))
    w = r.standard_normal((cout, cin // groups, k, k))
    b = r.standard_normal(cout)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), groups=groups, padding=pad).data
    np.testing.assert_allclose(out, brute_conv(x, w, b, groups, pad), atol=1e-10)


def test_conv_param_count_and_group_errors():
    assert Conv2d(3, 64, 3).num_params() == 1792
    with pytest.raises(T.GroupMismatch):
        T.conv2d(Tensor(np.ones((3, 4, 4))), Tensor(np.ones((4, 1, 1, 1))), groups=2)


# -- pixel shuffle ----------------------------------------------------------

def test_pixel_shuffle_examples():
    x = np.arange(16, dtype=np.float64).reshape(4, 2, 2)
    y = T.pixel_shuffle(Tensor(x), 2).data
    assert y.shape == (1, 4, 4)
    x = np.zeros((4, 1, 1))
    x[:, 0, 0] = np.arange(4)
    np.testing.assert_array_equal(T.pixel_shuffle(Tensor(x), 2).data[0], [[0, 1], [2, 3]])


def test_pixel_shuffle_index_map(rng):
    r, c, h, w = 3, 2, 2, 3
    x = rng.standard_normal((c * r * r, h, w))
    y = T.pixel_shuffle(Tensor(x), r).data
    for ch in range(c):
        for i in range(h * r):
            for j in range(w * r):
                assert y[ch, i, j] == x[ch * r * r + (i % r) * r + (j % r), i // r, j // r]


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_shuffle_round_trip(r, c, h, w):
    x = np.random.default_rng(r + 7 * c).standard_normal((c * r * r, h, w))
    np.testing.assert_array_equal(T.pixel_unshuffle(T.pixel_shuffle(Tensor(x), r), r).data, x)


def test_shuffle_channel_error():
    with pytest.raises(T.ChannelNotDivisible):
        T.pixel_shuffle(Tensor(np.ones((3, 2, 2))), 2)


# -- tape -------------------------------------------------------------------

def test_sum_of_squares_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    (g,) = tape.gradient(loss, [x])
    np.testing.assert_array_equal(g, [2.0, 4.0])


def test_softmax_pick_grad_matches_central_difference():
    x0 = np.array([0.3, -1.2])
    x = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        y = T.softmax(x)[0]
    (g,) = tape.gradient(y, [x])
    h = 1e-4
    num = []
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        f = lambda v: np.exp(v[0]) / np.exp(v).sum()
        num.append((f(x0 + e) - f(x0 - e)) / (2 * h))
    np.testing.assert_allclose(g, num, atol=1e-5)


def test_detached_branch_contributes_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = (x * 3.0 + x.detach() * x.detach()).sum()
    (g,) = tape.gradient(loss, [x])
    np.testing.assert_array_equal(g, [3.0, 3.0])


def test_gradient_errors():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(T.NotScalar):
        tape.gradient(y, [x])
    with pytest.raises(T.DetachedNode):
        tape.gradient(Tensor(1.0), [x])


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape, T.no_grad():
        _ = x * 2.0
    assert len(tape.records) == 0


def test_backward_fills_grad():
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape():
        loss = (x * x).sum()
        loss.backward()
    np.testing.assert_array_equal(x.grad, [2.0, -4.0])


# -- adam -------------------------------------------------------------------

def test_adam_first_step():
    p = Tensor(np.ones(3), requires_grad=True)
    st_ = AdamState()
    adam_step([p], [np.ones(3)], st_, 0.1)
    np.testing.assert_allclose(p.data, 1.0 - 0.1 / (1.0 + 1e-8), rtol=1e-6)


def test_adam_zero_grad_is_noop():
    p = Tensor(np.full(3, 2.5), requires_grad=True)
    adam_step([p], [np.zeros(3)], AdamState(), 0.1)
    np.testing.assert_array_equal(p.data, 2.5)


def test_adam_twins_stay_identical(rng):
    a = Tensor(np.ones(4), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    st_ = AdamState()
    for _ in range(5):
        g = rng.standard_normal(4)
        adam_step([a, b], [g, g.copy()], st_, 0.01)
    np.testing.assert_array_equal(a.data, b.data)
