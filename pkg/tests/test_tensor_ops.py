import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wavenet import tensor_ops as ops
from wavenet.errors import ConfigError, DataError, ShapeError, StateError
from wavenet.tensor_ops import ConvKernel

from conftest import central_difference, rel_error


def naive_causal_conv(x, w, b, d):
    """Direct O(T * F) loop with explicit zero left-padding."""
    T, _ = x.shape
    F = w.shape[0]
    y = np.zeros((T, w.shape[2]))
    for t in range(T):
        y[t] = b
        for i in range(F):
            src = t - d * (F - 1 - i)
            if src >= 0:
                y[t] += x[src] @ w[i]
    return y


def kernel(rng, F, cin, cout, d=1):
    return ConvKernel(rng.normal(size=(F, cin, cout)), rng.normal(size=cout), d)


def test_current_tap_identity():
    w = np.zeros((2, 1, 1))
    w[1] = 1.0
    x = np.arange(1.0, 6.0)[:, None]
    assert np.array_equal(ops.causal_conv(x, ConvKernel(w, np.zeros(1))), x)


def test_past_tap_shift():
    w = np.zeros((2, 1, 1))
    w[0] = 1.0
    x = np.arange(1.0, 6.0)[:, None]
    y = ops.causal_conv(x, ConvKernel(w, np.zeros(1)))
    assert y[:, 0].tolist() == [0.0, 1.0, 2.0, 3.0, 4.0]


def test_dilated_hand_example():
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    w = np.ones((2, 1, 1))
    k = ConvKernel(w, np.zeros(1), dilation=2)
    assert ops.causal_conv(x, k)[:, 0].tolist() == [1.0, 2.0, 4.0, 6.0]
    assert naive_causal_conv(x, w, np.zeros(1), 2)[:, 0].tolist() == [1.0, 2.0, 4.0, 6.0]


@pytest.mark.parametrize("F,d", [(1, 1), (2, 1), (2, 3), (3, 2), (4, 5)])
def test_matches_naive_oracle(rng, F, d):
    x = rng.normal(size=(12, 3))
    k = kernel(rng, F, 3, 2, d)
    assert np.allclose(ops.causal_conv(x, k), naive_causal_conv(x, k.weight, k.bias, d), atol=1e-12)


def test_integer_case_bit_exact(rng):
    x = rng.integers(-3, 4, size=(10, 2)).astype(float)
    k = ConvKernel(rng.integers(-2, 3, size=(3, 2, 2)).astype(float), np.array([1.0, -1.0]), 2)
    assert np.array_equal(ops.causal_conv(x, k), naive_causal_conv(x, k.weight, k.bias, 2))


def test_channel_mismatch_names_shapes(rng):
    with pytest.raises(ShapeError, match=r"\(5, 3\).*\(2, 2, 1\)"):
        ops.causal_conv(rng.normal(size=(5, 3)), kernel(rng, 2, 2, 1))


def test_batched_equals_per_item(rng):
    x = rng.normal(size=(3, 9, 2))
    k = kernel(rng, 2, 2, 4, 2)
    y = ops.causal_conv(x, k)
    for i in range(3):
        assert np.allclose(y[i], ops.causal_conv(x[i], k))


@given(st.integers(0, 11), st.integers(1, 3), st.integers(1, 4))
def test_causality(t, F, d):
    rng = np.random.default_rng(t * 100 + F * 10 + d)
    x = rng.normal(size=(12, 2))
    k = kernel(rng, F, 2, 3, d)
    y = ops.causal_conv(x, k)
    x2 = x.copy()
    x2[t:] += rng.normal(size=x2[t:].shape)
    assert np.array_equal(ops.causal_conv(x2, k)[:t], y[:t])


def test_linearity(rng):
    a, b = rng.normal(size=(2, 10, 3))
    k = kernel(rng, 3, 3, 2, 2)
    k0 = ConvKernel(k.weight, np.zeros(2), 2)
    lhs = ops.causal_conv(2.5 * a - 0.7 * b, k0)
    rhs = 2.5 * ops.causal_conv(a, k0) - 0.7 * ops.causal_conv(b, k0)
    assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_conv_backward_zero_and_identity(rng):
    x = rng.normal(size=(6, 2))
    k = kernel(rng, 2, 2, 2, 2)
    gk = ConvKernel.zeros(2, 2, 2, 2)
    assert np.array_equal(ops.causal_conv_backward(np.zeros((6, 2)), x, k, gk), np.zeros((6, 2)))
    assert not gk.weight.any() and not gk.bias.any()
    ident = ConvKernel(np.eye(2)[None], np.zeros(2))
    g = rng.normal(size=(6, 2))
    assert np.array_equal(ops.causal_conv_backward(g, x, ident), g)


def test_conv_backward_requires_saved_input(rng):
    with pytest.raises(StateError):
        ops.causal_conv_backward(np.zeros((3, 1)), None, kernel(rng, 2, 1, 1))


def test_conv_backward_finite_difference(rng):
    x = rng.normal(size=(6, 2))
    k = kernel(rng, 2, 2, 3, 2)
    proj = rng.normal(size=(6, 3))
    gk = ConvKernel.zeros(2, 2, 3, 2)
    gx = ops.causal_conv_backward(proj, x, k, gk)
    f = lambda: float(np.sum(ops.causal_conv(x, k) * proj))
    assert rel_error(gx, central_difference(f, x)) < 1e-5
    assert rel_error(gk.weight, central_difference(f, k.weight)) < 1e-5
    assert rel_error(gk.bias, central_difference(f, k.bias)) < 1e-5


def test_centered_conv_backward_finite_difference(rng):
    x = rng.normal(size=(7, 2))
    k = kernel(rng, 3, 2, 3)
    proj = rng.normal(size=(7, 3))
    gk = ConvKernel.zeros(3, 2, 3)
    gx = ops.centered_conv_backward(proj, x, k, gk)
    f = lambda: float(np.sum(ops.centered_conv(x, k) * proj))
    assert rel_error(gx, central_difference(f, x)) < 1e-5
    assert rel_error(gk.weight, central_difference(f, k.weight)) < 1e-5


def test_centered_conv_reads_both_sides():
    x = np.zeros((5, 1))
    x[2] = 1.0
    w = np.array([1.0, 10.0, 100.0]).reshape(3, 1, 1)
    y = ops.centered_conv(x, ConvKernel(w, np.zeros(1)))
    assert y[:, 0].tolist() == [0.0, 100.0, 10.0, 1.0, 0.0]


def test_gated_values():
    z = ops.gated_activation(np.zeros((2, 2)), np.zeros((2, 2)))
    assert np.array_equal(z, np.zeros((2, 2)))
    assert ops.gated_activation(np.array([[40.0]]), np.array([[40.0]]))[0, 0] == pytest.approx(1.0, abs=1e-12)
    # mpmath: tanh(1) * sigmoid(-1)
    assert ops.gated_activation(np.array([[1.0]]), np.array([[-1.0]]))[0, 0] == pytest.approx(
        0.2048242148098251438, abs=1e-12
    )


def test_gated_range(rng):
    z = ops.gated_activation(rng.normal(scale=5, size=(50, 4)), rng.normal(scale=5, size=(50, 4)))
    assert np.all(np.abs(z) < 1)


def test_gated_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.gated_activation(np.zeros((2, 3)), np.zeros((3, 2)))


def test_gated_backward(rng):
    f, g = rng.normal(size=(2, 5, 3))
    go = rng.normal(size=(5, 3))
    gf, gg = ops.gated_activation_backward(go, f, g)
    obj = lambda: float(np.sum(ops.gated_activation(f, g) * go))
    assert rel_error(gf, central_difference(obj, f)) < 1e-5
    assert rel_error(gg, central_difference(obj, g)) < 1e-5
    zf, zg = ops.gated_activation_backward(np.zeros((5, 3)), f, g)
    assert not zf.any() and not zg.any()
    _, gg0 = ops.gated_activation_backward(go, np.zeros((5, 3)), g)
    assert not gg0.any()


def test_conv1x1(rng):
    x = rng.normal(size=(5, 3))
    assert np.array_equal(ops.conv1x1(x, ConvKernel(np.eye(3)[None], np.zeros(3))), x)
    b = np.array([1.0, 2.0])
    assert np.array_equal(ops.conv1x1(x, ConvKernel(np.zeros((1, 3, 2)), b)), np.tile(b, (5, 1)))
    x2 = rng.normal(size=(4, 2))
    k = kernel(rng, 1, 2, 3)
    assert np.allclose(ops.conv1x1(x2, k), np.dot(x2, k.weight[0]) + k.bias, rtol=0, atol=1e-15)
    with pytest.raises(ConfigError):
        ops.conv1x1(x, kernel(rng, 2, 3, 3))


def test_conv1x1_backward(rng):
    x = rng.normal(size=(4, 2))
    k = kernel(rng, 1, 2, 3)
    proj = rng.normal(size=(4, 3))
    gk = ConvKernel.zeros(1, 2, 3)
    gx = ops.conv1x1_backward(proj, x, k, gk)
    f = lambda: float(np.sum(ops.conv1x1(x, k) * proj))
    assert rel_error(gx, central_difference(f, x)) < 1e-5
    assert rel_error(gk.weight, central_difference(f, k.weight)) < 1e-5


def test_upsample_identity_and_replication():
    cond = np.array([[1.0, -2.0], [3.0, 0.5]])
    assert np.array_equal(ops.upsample_transposed(cond, ops.replication_kernel(2, 1), 1), cond)
    up = ops.upsample_transposed(cond, ops.replication_kernel(2, 4), 4)
    assert np.array_equal(up, np.repeat(cond, 4, axis=0))
    assert np.array_equal(up, ops.repeat_upsample(cond, 4))


def test_upsample_matches_zero_stuffed_conv(rng):
    f = 3
    cond = rng.normal(size=(5, 2))
    k = kernel(rng, f, 2, 4)
    stuffed = np.zeros((5 * f, 2))
    stuffed[::f] = cond
    # zero insertion followed by a width-f causal conv with taps reversed
    oracle = ops.causal_conv(stuffed, ConvKernel(k.weight[::-1].copy(), k.bias))
    assert np.allclose(ops.upsample_transposed(cond, k, f), oracle, atol=1e-12)


def test_upsample_backward(rng):
    cond = rng.normal(size=(3, 2))
    k = kernel(rng, 4, 2, 3)
    proj = rng.normal(size=(12, 3))
    gk = ConvKernel.zeros(4, 2, 3)
    gc = ops.upsample_transposed_backward(proj, cond, k, 4, gk)
    f = lambda: float(np.sum(ops.upsample_transposed(cond, k, 4) * proj))
    assert rel_error(gc, central_difference(f, cond)) < 1e-5
    assert rel_error(gk.weight, central_difference(f, k.weight)) < 1e-5


def test_upsample_config_errors(rng):
    with pytest.raises(ConfigError):
        ops.upsample_transposed(np.zeros((2, 1)), kernel(rng, 1, 1, 1), 0)
    with pytest.raises(ConfigError):
        ops.repeat_upsample(np.zeros((2, 1)), 0)


def test_repeat_upsample():
    a = np.array([[1.0], [2.0]])
    assert np.array_equal(ops.repeat_upsample(a, 1), a)
    assert ops.repeat_upsample(a, 2)[:, 0].tolist() == [1.0, 1.0, 2.0, 2.0]


@given(st.integers(0, 20), st.integers(1, 6))
def test_repeat_length(T, f):
    assert ops.repeat_upsample(np.zeros((T, 2)), f).shape == (T * f, 2)


def test_mean_pool_constant_and_backward(rng):
    x = np.full((320, 3), 0.25)
    assert np.array_equal(ops.mean_pool(x, 160), np.full((2, 3), 0.25))
    x = rng.normal(size=(10, 2))
    proj = rng.normal(size=(3, 2))
    g = ops.mean_pool_backward(proj, 3, 10)
    assert np.allclose(g[:9], np.repeat(proj / 3, 3, axis=0))
    assert not g[9].any()
    f = lambda: float(np.sum(ops.mean_pool(x, 3) * proj))
    assert rel_error(g, central_difference(f, x)) < 1e-5


def test_xent_uniform_and_saturated():
    loss, _ = ops.softmax_xent(np.zeros((5, 256)), np.arange(5))
    assert loss == pytest.approx(5.545177444479562, abs=1e-12)
    logits = np.zeros((1, 256))
    logits[0, 7] = 1e4
    assert ops.softmax_xent(logits, np.array([7]))[0] == pytest.approx(0.0, abs=1e-12)


def test_xent_gradient(rng):
    logits = rng.normal(size=(4, 8))
    t = rng.integers(8, size=4)
    _, g = ops.softmax_xent(logits, t)
    num = central_difference(lambda: ops.softmax_xent(logits, t)[0], logits)
    assert rel_error(g, num) < 1e-5


def test_xent_mask(rng):
    logits = rng.normal(size=(6, 4))
    t = rng.integers(4, size=6)
    mask = np.array([1, 0, 1, 1, 0, 1], bool)
    loss, g = ops.softmax_xent(logits, t, mask)
    assert loss == pytest.approx(ops.softmax_xent(logits[mask], t[mask])[0])
    assert not g[~mask].any()


def test_xent_target_range():
    with pytest.raises(DataError):
        ops.softmax_xent(np.zeros((2, 4)), np.array([0, 4]))


@given(st.floats(-50, 50))
def test_xent_shift_invariance(c):
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(3, 8))
    t = np.array([1, 5, 7])
    assert ops.softmax_xent(logits + c, t)[0] == pytest.approx(ops.softmax_xent(logits, t)[0], abs=1e-9)


def test_softmax_rows_sum_to_one(rng):
    p = ops.softmax(rng.normal(scale=30, size=(20, 256)))
    assert np.max(np.abs(p.sum(-1) - 1)) < 1e-9


def test_tape_load_missing_state():
    tape = ops.GradientTape({"a.w": np.zeros(2)})
    with pytest.raises(StateError):
        tape.load("h")
