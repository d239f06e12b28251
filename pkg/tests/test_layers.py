import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from chestnet.nn import (
    SGD,
    Conv2d,
    Dropout,
    Flatten,
    GlobalAvgPool,
    InceptionBlock,
    Linear,
    MaxPool2d,
    ReLU,
    ResidualBlock,
    Sequential,
    SgdConfig,
    conv_output_size,
    grad_check,
    sgd_step,
    softmax_cross_entropy,
)

from oracles import conv2d_loops, maxpool_loops

F64 = np.float64


def conv_with(weight, bias, stride=1, padding=0):
    weight = np.asarray(weight, dtype=F64)
    f, c, k, _ = weight.shape
    layer = Conv2d(c, f, k, stride, padding, dtype=F64)
    layer.params["weight"] = weight
    layer.params["bias"] = np.asarray(bias, dtype=F64)
    return layer


# -- conv2d -------------------------------------------------------------------

def test_conv_forward_ones_kernel():
    x = np.arange(1, 17, dtype=F64).reshape(1, 1, 4, 4)
    out = conv_with(np.ones((1, 1, 2, 2)), [0.0])(x)
    # frozen from conv2d_loops
    assert out[0, 0].tolist() == [[14, 18, 22], [30, 34, 38], [46, 50, 54]]


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 5, 7))
    out = conv_with(np.ones((1, 1, 1, 1)), [0.0])(x)
    np.testing.assert_array_equal(out, x)


def test_conv_shape_formula_299():
    assert conv_output_size(299, 8, 1, 0) == 292
    layer = Conv2d(1, 2, 8)
    assert layer.output_shape((1, 299, 299)) == (2, 292, 292)


def test_conv_errors():
    layer = Conv2d(2, 3, 3)
    with pytest.raises(ValueError):
        layer(np.zeros((1, 1, 5, 5)))
    with pytest.raises(ValueError):
        layer(np.zeros((1, 2, 2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.integers(1, 4),
       st.integers(1, 3), st.integers(0, 2), st.integers(3, 8), st.integers(0, 10**6))
def test_conv_matches_loop_oracle(n, c, f, k, s, p, size, seed):
    assume(size + 2 * p >= k)
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, c, size, size))
    w = r.standard_normal((f, c, k, k))
    b = r.standard_normal(f)
    got = conv_with(w, b, s, p)(x)
    ref = conv2d_loops(x, w, b, s, p)
    np.testing.assert_allclose(got, ref, rtol=1e-6, atol=1e-12)


def test_conv_backward_zero_grad(rng):
    layer = Conv2d(2, 3, 3, padding=1, rng=rng, dtype=F64)
    x = rng.standard_normal((1, 2, 4, 4))
    out = layer(x)
    gx = layer.backward(np.zeros_like(out))
    assert not gx.any() and not layer.grads["weight"].any() and not layer.grads["bias"].any()


def test_conv_backward_scalar_chain_rule():
    layer = conv_with([[[[0.7]]]], [0.0])
    layer(np.array([[[[3.0]]]]))
    layer.backward(np.ones((1, 1, 1, 1)))
    assert layer.grads["weight"].item() == 3.0


def test_conv_backward_without_forward_fails():
    with pytest.raises(RuntimeError):
        Conv2d(1, 1, 1).backward(np.zeros((1, 1, 1, 1)))


def test_conv_backward_shape_mismatch(rng):
    layer = Conv2d(1, 1, 3)
    layer(np.zeros((1, 1, 5, 5)))
    with pytest.raises(ValueError):
        layer.backward(np.zeros((1, 1, 2, 2)))


def test_conv_grad_check(rng):
    layer = Conv2d(2, 3, 3, rng=rng, dtype=F64)
    x = rng.standard_normal((1, 2, 6, 6))
    assert grad_check(layer, x, eps=1e-5) < 1e-6


def test_strided_padded_conv_grad_check(rng):
    layer = Conv2d(2, 2, 3, stride=2, padding=1, rng=rng, dtype=F64)
    assert grad_check(layer, rng.standard_normal((2, 2, 5, 5))) < 1e-6


# -- maxpool ------------------------------------------------------------------

def test_maxpool_example():
    x = np.arange(1, 17, dtype=F64).reshape(1, 1, 4, 4)
    assert MaxPool2d(2, 2)(x)[0, 0].tolist() == [[6, 8], [14, 16]]


def test_maxpool_constant_input():
    out = MaxPool2d(3, 2)(np.full((1, 2, 7, 7), 4.5))
    assert out.shape == (1, 2, 3, 3) and np.all(out == 4.5)


def test_maxpool_shape_292():
    assert MaxPool2d(3, 2).output_shape((1, 292, 292)) == (1, 145, 145)


def test_maxpool_window_too_large():
    with pytest.raises(ValueError):
        MaxPool2d(3, 2)(np.zeros((1, 1, 2, 2)))


def test_maxpool_tie_goes_to_first_position():
    pool = MaxPool2d(2, 2)
    pool(np.ones((1, 1, 2, 2)))
    g = pool.backward(np.ones((1, 1, 1, 1)))
    assert g[0, 0].tolist() == [[1, 0], [0, 0]]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 1), st.integers(4, 9), st.integers(0, 10**6))
def test_maxpool_matches_loop_oracle(k, s, p, size, seed):
    assume(p < k)
    x = np.random.default_rng(seed).standard_normal((2, 2, size, size))
    np.testing.assert_array_equal(MaxPool2d(k, s, p)(x), maxpool_loops(x, k, s, p))


def test_maxpool_grad_check(rng):
    # distinct values spaced well beyond eps, so no ties
    x = rng.permutation(72).reshape(1, 2, 6, 6).astype(F64) * 0.1
    assert grad_check(MaxPool2d(3, 2), x) < 1e-6
    assert grad_check(MaxPool2d(3, 1, 1), x) < 1e-6


# -- relu / fc / dropout / flatten / gap ---------------------------------------

def test_relu_forward_backward():
    r = ReLU()
    assert r(np.array([-2.0, 3.0])).tolist() == [0, 3]
    assert r.backward(np.array([1.0, 1.0])).tolist() == [0, 1]


def test_relu_subgradient_zero_at_zero():
    r = ReLU()
    r(np.array([0.0]))
    assert r.backward(np.array([1.0])).tolist() == [0]


def test_relu_grad_check_away_from_kink(rng):
    x = rng.uniform(0.01, 1, (3, 5)) * rng.choice([-1, 1], (3, 5))
    assert grad_check(ReLU(), x) < 1e-6


def test_fc_examples():
    fc = Linear(2, 2, dtype=F64)
    fc.params["weight"] = np.eye(2)
    assert fc(np.array([[3.0, 4.0]])).tolist() == [[3, 4]]
    fc = Linear(2, 1, dtype=F64)
    fc.params["weight"] = np.array([[1.0, 1.0]])
    fc.params["bias"] = np.array([0.5])
    assert fc(np.array([[2.0, 3.0]])).tolist() == [[5.5]]


def test_fc_feature_mismatch():
    with pytest.raises(ValueError):
        Linear(3, 2)(np.zeros((1, 4)))


def test_fc_grad_check(rng):
    assert grad_check(Linear(10, 3, rng=rng, dtype=F64), rng.standard_normal((4, 10))) < 1e-6


def test_dropout_identities(rng):
    x = rng.standard_normal((4, 6))
    np.testing.assert_array_equal(Dropout(0.5)(x, train=False), x)
    np.testing.assert_array_equal(Dropout(0.0)(x, train=True), x)


def test_dropout_rate_validation():
    for rate in (-0.1, 1.0):
        with pytest.raises(ValueError):
            Dropout(rate)


def test_dropout_expectation():
    out = Dropout(0.5, seed=7)(np.ones(100_000), train=True)
    assert 0.97 <= out.mean() <= 1.03
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_mask_is_seeded():
    a = Dropout(0.5, seed=3)(np.ones(50), train=True)
    b = Dropout(0.5, seed=3)(np.ones(50), train=True)
    np.testing.assert_array_equal(a, b)


def test_dropout_backward_uses_forward_mask(rng):
    d = Dropout(0.3, seed=1)
    out = d(np.ones((3, 4)), train=True)
    np.testing.assert_array_equal(d.backward(np.ones((3, 4))), out)


def test_dropout_grad_check_fixed_mask(rng):
    assert grad_check(Dropout(0.5, seed=2), rng.standard_normal((3, 8))) < 1e-6


def test_flatten_row_major():
    x = np.arange(1, 9, dtype=F64).reshape(1, 2, 2, 2)
    f = Flatten()
    assert f(x).tolist() == [list(range(1, 9))]
    assert f.backward(f(x)).shape == x.shape


def test_global_avg_pool():
    gap = GlobalAvgPool()
    assert gap(np.full((1, 1, 3, 3), 5.0)).item() == 5.0
    assert gap(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])).item() == 2.5
    assert gap.backward(np.ones((1, 1))).tolist() == [[[[0.25, 0.25], [0.25, 0.25]]]]


def test_global_avg_pool_grad_check(rng):
    assert grad_check(GlobalAvgPool(), rng.standard_normal((2, 3, 4, 4))) < 1e-6


# -- residual / inception -----------------------------------------------------

def _zero_params(layer):
    for _, sub in layer.named_layers():
        for k in sub.params:
            sub.params[k] = np.zeros_like(sub.params[k])


def test_residual_zero_branch_identity_skip(rng):
    block = ResidualBlock(3, 3, 1, dtype=F64)
    _zero_params(block)
    x = rng.standard_normal((2, 3, 5, 5))
    np.testing.assert_array_equal(block(x), np.maximum(x, 0))
    nonneg = np.abs(x)
    np.testing.assert_array_equal(block(nonneg), nonneg)


def test_residual_identity_projection(rng):
    block = ResidualBlock(2, 2, 1, projection=True, dtype=F64)
    _zero_params(block)
    block.shortcut.params["weight"] = np.eye(2).reshape(2, 2, 1, 1)
    x = rng.standard_normal((1, 2, 4, 4))
    np.testing.assert_array_equal(block(x), np.maximum(x, 0))


def test_residual_bad_identity_config():
    with pytest.raises(ValueError):
        ResidualBlock(2, 4, 1, projection=False)


def test_residual_stride_shape(rng):
    block = ResidualBlock(2, 4, 2, rng=rng)
    assert block.output_shape((2, 7, 7)) == (4, 4, 4)
    assert block(np.zeros((1, 2, 7, 7), np.float32)).shape == (1, 4, 4, 4)


@pytest.mark.parametrize("cin,cout,stride", [(2, 2, 1), (2, 3, 2)])
def test_residual_grad_check(rng, cin, cout, stride):
    block = ResidualBlock(cin, cout, stride, rng=rng, dtype=F64)
    assert grad_check(block, rng.standard_normal((1, cin, 5, 5))) < 1e-6


def test_inception_zero_weights_zero_output(rng):
    block = InceptionBlock(3, 2, (2, 3), (1, 2), 2, dtype=F64)
    _zero_params(block)
    out = block(rng.standard_normal((2, 3, 6, 6)))
    assert out.shape == (2, 9, 6, 6) and not out.any()


def test_inception_rejects_empty_branch():
    with pytest.raises(ValueError):
        InceptionBlock(3, 0, (2, 3), (1, 2), 2)


def test_inception_forward_equals_branch_composition(rng):
    block = InceptionBlock(3, 2, (2, 3), (1, 2), 2, rng=rng, dtype=F64)
    x = rng.standard_normal((2, 3, 6, 6))
    parts = []
    for branch in block.branches:
        y = x
        for layer in branch:
            if isinstance(layer, Conv2d):
                y = conv2d_loops(y, layer.params["weight"], layer.params["bias"],
                                 layer.stride, layer.padding)
            elif isinstance(layer, MaxPool2d):
                y = maxpool_loops(y, 3, 1, 1)
            else:
                y = np.maximum(y, 0)
        parts.append(y)
    np.testing.assert_allclose(block(x), np.concatenate(parts, axis=1), rtol=1e-12, atol=1e-12)


def test_inception_forward_bit_exact_against_layerwise(rng):
    block = InceptionBlock(3, 2, (2, 3), (1, 2), 2, rng=rng, dtype=F64)
    x = rng.standard_normal((1, 3, 5, 5))
    parts = []
    for branch in block.branches:
        y = x
        for layer in branch:
            y = layer.forward(y)
        parts.append(y)
    np.testing.assert_array_equal(block(x), np.concatenate(parts, axis=1))


def test_inception_grad_check(rng):
    block = InceptionBlock(2, 2, (2, 2), (1, 2), 1, rng=rng, dtype=F64)
    assert grad_check(block, rng.standard_normal((1, 2, 5, 5))) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 4), st.integers(1, 3),
       st.integers(1, 4), st.integers(1, 4))
def test_inception_channel_sum(b1, r3, b3, r5, b5, pp):
    block = InceptionBlock(2, b1, (r3, b3), (r5, b5), pp)
    assert block.output_shape((2, 6, 6)) == (b1 + b3 + b5 + pp, 6, 6)
    assert block(np.zeros((1, 2, 6, 6), np.float32)).shape[1] == b1 + b3 + b5 + pp


# -- loss ---------------------------------------------------------------------

def test_cross_entropy_uniform():
    loss, probs, _ = softmax_cross_entropy(np.zeros((1, 4)), [2])
    np.testing.assert_allclose(probs, 0.25)
    assert abs(loss - math.log(4)) < 1e-12
    assert abs(loss - 1.386294) < 1e-6


def test_cross_entropy_confident():
    loss, _, _ = softmax_cross_entropy(np.array([[10.0, -10, -10, -10]]), [0])
    assert loss < 1e-8


def test_cross_entropy_label_range():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 4)), [0, 4])


def test_cross_entropy_grad_check(rng):
    logits = rng.standard_normal((5, 4))
    labels = rng.integers(0, 4, 5)
    _, _, grad = softmax_cross_entropy(logits, labels)
    eps = 1e-5
    worst = 0.0
    for idx in np.ndindex(logits.shape):
        plus, minus = logits.copy(), logits.copy()
        plus[idx] += eps
        minus[idx] -= eps
        num = (softmax_cross_entropy(plus, labels)[0] - softmax_cross_entropy(minus, labels)[0]) / (2 * eps)
        worst = max(worst, abs(num - grad[idx]) / max(abs(num), abs(grad[idx]), 1e-12))
    assert worst < 1e-6


@given(st.integers(1, 6), st.integers(2, 6), st.integers(0, 10**6))
def test_softmax_rows_sum_to_one_and_loss_nonnegative(n, k, seed):
    r = np.random.default_rng(seed)
    logits = r.normal(0, 20, (n, k))
    loss, probs, _ = softmax_cross_entropy(logits, r.integers(0, k, n))
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-6)
    assert loss >= 0


# -- sgd ----------------------------------------------------------------------

def _scalar_model(w=1.0, g=0.5):
    fc = Linear(1, 1, dtype=F64)
    fc.params["weight"] = np.array([[w]])
    fc.grads = {"weight": np.array([[g]]), "bias": np.zeros(1)}
    return Sequential([fc]), fc


def test_sgd_update_arithmetic():
    model, fc = _scalar_model()
    sgd_step(model, SgdConfig(0.001))
    assert fc.params["weight"].item() == pytest.approx(0.9995, abs=1e-15)


def test_sgd_zero_gradient_leaves_params():
    model, fc = _scalar_model(g=0.0)
    before = fc.params["weight"].copy()
    sgd_step(model, SgdConfig(0.001))
    np.testing.assert_array_equal(fc.params["weight"], before)


def test_sgd_skips_frozen_layers():
    model, fc = _scalar_model()
    fc.frozen = True
    sgd_step(model, SgdConfig(0.1))
    assert fc.params["weight"].item() == 1.0


def test_sgd_momentum():
    model, fc = _scalar_model()
    opt = SGD(SgdConfig(0.1, 0.9))
    opt.step(model)
    opt.step(model)
    # v1 = 0.5, v2 = 0.9 * 0.5 + 0.5 = 0.95
    assert fc.params["weight"].item() == pytest.approx(1 - 0.1 * 0.5 - 0.1 * 0.95)


def test_sgd_shape_mismatch():
    model, fc = _scalar_model()
    fc.grads["weight"] = np.zeros((2, 2))
    with pytest.raises(ValueError):
        sgd_step(model)


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        SgdConfig(0.0)
    with pytest.raises(ValueError):
        SgdConfig(0.1, 1.0)


def test_sgd_zero_lr_is_identity(rng):
    # lr must be positive in the config; the optimizer itself honours lr = 0
    model = Sequential([Conv2d(1, 2, 3, rng=rng), Flatten(), Linear(2 * 3 * 3, 4, rng=rng)])
    _, _, g = softmax_cross_entropy(model(rng.standard_normal((2, 1, 5, 5)).astype(np.float32)), [0, 1])
    model.backward(g)
    before = {n: l.params[p].copy() for n, l, p in model.named_parameters()}
    opt = SGD()
    opt.config.learning_rate = 0.0
    opt.step(model)
    for n, l, p in model.named_parameters():
        assert l.params[p].tobytes() == before[n].tobytes()


# -- grad_check itself ----------------------------------------------------------

def test_grad_check_linear_single_weight():
    fc = Linear(1, 1, dtype=F64)
    fc.params["weight"] = np.array([[0.3]])
    assert grad_check(fc, np.array([[2.0]])) < 1e-9


def test_grad_check_requires_float64():
    with pytest.raises(TypeError):
        grad_check(Linear(2, 2), np.ones((1, 2)))


def test_grad_check_non_finite():
    fc = Linear(1, 1, dtype=F64)
    fc.params["weight"] = np.array([[np.inf]])
    with pytest.raises(FloatingPointError):
        grad_check(fc, np.array([[1.0]]))


@settings(max_examples=50)
@given(st.integers(1, 64), st.integers(1, 7), st.integers(1, 4), st.integers(0, 3))
def test_output_shape_formula(n, k, s, p):
    assume(n + 2 * p >= k)
    assert conv_output_size(n, k, s, p) == (n + 2 * p - k) // s + 1
    assert MaxPool2d(k, s, p).output_shape((1, n, n))[1] == math.floor((n + 2 * p - k) / s) + 1
