import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cobbnet.neural import layers as L
from conftest import REL_TOL, central_diff, max_rel_error

N_RANDOM = 20


def naive_conv(x, w, b, stride, pad):
    c, h, wd = x.shape
    k, _, n, _ = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    ho = (h - n + 2 * pad) // stride + 1
    wo = (wd - n + 2 * pad) // stride + 1
    out = np.zeros((k, ho, wo))
    for o in range(k):
        for r in range(ho):
            for q in range(wo):
                acc = b[o]
                for ci in range(c):
                    for i in range(n):
                        for j in range(n):
                            acc += w[o, ci, i, j] * xp[ci, r * stride + i, q * stride + j]
                out[o, r, q] = acc
    return out


# ---------------------------------------------------------------- conv


def test_conv_demo_geometry():
    x = np.random.default_rng(0).normal(size=(3, 5, 5))
    out = L.conv_forward(x, np.ones((2, 3, 3, 3)), np.zeros(2), stride=2, pad=1)
    assert out.shape == (2, 3, 3)


def test_conv_zero_kernels_give_bias():
    x = np.random.default_rng(1).normal(size=(2, 4, 6, 6))
    out = L.conv_forward(x, np.zeros((3, 4, 3, 3)), np.array([0.5, -1.0, 2.0]), 1, 1)
    for k, b in enumerate([0.5, -1.0, 2.0]):
        assert np.all(out[:, k] == b)


@pytest.mark.parametrize("stride,pad,n", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (1, 2, 5), (3, 0, 3)])
def test_conv_matches_sliding_window_oracle(stride, pad, n):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 6, 6))
    w = rng.normal(size=(3, 2, n, n))
    b = rng.normal(size=3)
    if (6 - n + 2 * pad) % stride:
        with pytest.raises(L.ConfigError):
            L.conv_forward(x, w, b, stride, pad)
        return
    np.testing.assert_allclose(L.conv_forward(x, w, b, stride, pad), naive_conv(x, w, b, stride, pad),
                               rtol=1e-12, atol=1e-12)


def test_conv_single_channel_oracle():
    rng = np.random.default_rng(2)
    x, w, b = rng.normal(size=(1, 6, 6)), rng.normal(size=(1, 1, 3, 3)), rng.normal(size=1)
    np.testing.assert_allclose(L.conv_forward(x, w, b), naive_conv(x, w, b, 1, 0), rtol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(L.ConfigError):
        L.conv_forward(np.zeros((2, 5, 5)), np.zeros((1, 3, 3, 3)), np.zeros(1))


def test_conv_backward_zero_grad():
    rng = np.random.default_rng(3)
    x, w = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(4, 3, 3, 3))
    gx, gw, gb = L.conv_backward(x, w, np.zeros((2, 4, 5, 5)), 1, 1)
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_bias_grad_is_channel_sum():
    rng = np.random.default_rng(4)
    x, w = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(4, 3, 3, 3))
    g = rng.normal(size=(2, 4, 3, 3))
    _, _, gb = L.conv_backward(x, w, g, 2, 1)
    np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3)), rtol=1e-14)


CONV_CONFIGS = [(1, 1, 3), (2, 1, 3), (1, 0, 3), (1, 2, 5), (2, 0, 1)]


@pytest.mark.parametrize("trial", range(N_RANDOM))
def test_conv_backward_finite_differences(trial):
    rng = np.random.default_rng(100 + trial)
    stride, pad, n = CONV_CONFIGS[trial % len(CONV_CONFIGS)]
    size = 5 if stride == 2 or n == 5 else 4
    if (size - n + 2 * pad) % stride:
        size += 1
    x = rng.uniform(-1, 1, (2, 2, size, size))
    w = rng.uniform(-1, 1, (3, 2, n, n))
    b = rng.uniform(-1, 1, 3)
    out = L.conv_forward(x, w, b, stride, pad)
    proj = rng.normal(size=out.shape)

    def loss():
        return float(np.sum(proj * L.conv_forward(x, w, b, stride, pad)))

    gx, gw, gb = L.conv_backward(x, w, proj, stride, pad)
    assert max_rel_error(gx, central_diff(loss, x)) <= REL_TOL
    assert max_rel_error(gw, central_diff(loss, w)) <= REL_TOL
    assert max_rel_error(gb, central_diff(loss, b)) <= REL_TOL


# ---------------------------------------------------------------- relu


def test_relu_forward():
    assert L.relu_forward([-2.0, 0.0, 3.0]).tolist() == [0.0, 0.0, 3.0]


def test_relu_gradient_points():
    g = L.relu_backward(np.array([-1.0, 2.0, 0.0]), np.array([5.0, 5.0, 5.0]))
    assert g.tolist() == [0.0, 5.0, 0.0]  # 0 at exactly x = 0 by convention


def away_from(rng, shape, kinks_fn, margin=1e-3):
    """Uniform [-1, 1] samples, redrawn until no kink is within ``margin``."""
    while True:
        x = rng.uniform(-1, 1, shape)
        if kinks_fn(x) > margin:
            return x


@pytest.mark.parametrize("trial", range(N_RANDOM))
def test_relu_finite_differences(trial):
    rng = np.random.default_rng(200 + trial)
    x = away_from(rng, (3, 7), lambda v: np.abs(v).min())
    proj = rng.normal(size=x.shape)
    num = central_diff(lambda: float(np.sum(proj * L.relu_forward(x))), x)
    assert max_rel_error(L.relu_backward(x, proj), num) <= REL_TOL


# ---------------------------------------------------------------- pooling


def test_maxpool_single_window():
    out, idx = L.maxpool_forward(np.array([[[1.0, 1.0], [5.0, 6.0]]]))
    assert out.tolist() == [[[6.0]]]
    assert idx.tolist() == [[[3]]]


def test_maxpool_constant_routes_to_first():
    x = np.full((1, 4, 4), 2.0)
    out, idx = L.maxpool_forward(x)
    assert np.all(out == 2.0)
    g = L.maxpool_backward(np.ones((1, 2, 2)), idx, x.shape)
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    np.testing.assert_array_equal(g[0], expected)


def test_maxpool_brute_force_windows():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 4, 4))
    out, _ = L.maxpool_forward(x)
    for b in range(2):
        for c in range(3):
            for i in range(2):
                for j in range(2):
                    assert out[b, c, i, j] == max(x[b, c, 2 * i + di, 2 * j + dj]
                                                  for di in range(2) for dj in range(2))


def test_pool_odd_dims_rejected():
    with pytest.raises(L.ConfigError):
        L.maxpool_forward(np.zeros((1, 3, 4)))
    with pytest.raises(L.ConfigError):
        L.avgpool_forward(np.zeros((1, 4, 5)))


def _window_gap(x):
    win = np.sort(L._pool_windows(x[None] if x.ndim == 3 else x), axis=-1)
    return float((win[..., 3] - win[..., 2]).min())


@pytest.mark.parametrize("trial", range(N_RANDOM))
def test_maxpool_finite_differences(trial):
    rng = np.random.default_rng(300 + trial)
    x = away_from(rng, (2, 2, 4, 6), _window_gap)
    out, idx = L.maxpool_forward(x)
    proj = rng.normal(size=out.shape)
    num = central_diff(lambda: float(np.sum(proj * L.maxpool_forward(x)[0])), x)
    assert max_rel_error(L.maxpool_backward(proj, idx, x.shape), num) <= REL_TOL


def test_avgpool_hand_values():
    assert L.avgpool_forward(np.ones((1, 2, 2))).tolist() == [[[1.0]]]
    assert L.avgpool_forward(np.array([[[0.0, 2.0], [4.0, 6.0]]])).tolist() == [[[3.0]]]


@pytest.mark.parametrize("trial", range(N_RANDOM))
def test_avgpool_finite_differences(trial):
    rng = np.random.default_rng(400 + trial)
    x = rng.uniform(-1, 1, (2, 3, 4, 4))
    proj = rng.normal(size=(2, 3, 2, 2))
    num = central_diff(lambda: float(np.sum(proj * L.avgpool_forward(x))), x)
    assert max_rel_error(L.avgpool_backward(proj, x.shape), num) <= REL_TOL


# ---------------------------------------------------------------- fc


def test_fc_identity_and_bias():
    x = np.array([1.0, -2.0, 3.0])
    assert L.fc_forward(x, np.eye(3), np.zeros(3)).tolist() == x.tolist()
    assert L.fc_forward(np.zeros(3), np.ones((2, 3)), np.array([4.0, 5.0])).tolist() == [4.0, 5.0]


@pytest.mark.parametrize("trial", range(N_RANDOM))
def test_fc_finite_differences(trial):
    rng = np.random.default_rng(500 + trial)
    x = rng.uniform(-1, 1, (3, 5))
    w = rng.uniform(-1, 1, (4, 5))
    b = rng.uniform(-1, 1, 4)
    proj = rng.normal(size=(3, 4))

    def loss():
        return float(np.sum(proj * L.fc_forward(x, w, b)))

    gx, gw, gb = L.fc_backward(x, w, proj)
    assert max_rel_error(gx, central_diff(loss, x)) <= REL_TOL
    assert max_rel_error(gw, central_diff(loss, w)) <= REL_TOL
    assert max_rel_error(gb, central_diff(loss, b)) <= REL_TOL


# ---------------------------------------------------------------- softmax


def test_softmax_uniform():
    np.testing.assert_allclose(L.softmax(np.full(4, 0.7)), np.full(4, 0.25), rtol=1e-15)


def test_softmax_large_logits():
    p = L.softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(p))
    assert p[0] == 1.0
    assert p[1] < 1e-300


def test_softmax_non_finite():
    with pytest.raises(L.NumericError):
        L.softmax(np.array([np.nan, 1.0]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12), st.floats(-50, 50))
def test_softmax_properties(logits, shift):
    z = np.array(logits)
    p = L.softmax(z)
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(L.softmax(z + shift), p, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("trial", range(N_RANDOM))
def test_softmax_head_finite_differences(trial):
    rng = np.random.default_rng(550 + trial)
    x = rng.uniform(-1, 1, (3, 5))
    head = L.SoftmaxHead()
    proj = rng.normal(size=x.shape)
    head.forward(x)
    g = head.backward(proj)
    num = central_diff(lambda: float(np.sum(proj * L.softmax(x, axis=-1))), x)
    assert max_rel_error(g, num) <= REL_TOL


# ---------------------------------------------------------------- batchnorm


def _bn(x, gamma, beta, train=True):
    c = gamma.shape[0]
    return L.batchnorm_forward(x, gamma, beta, np.zeros(c), np.ones(c), train)


def test_batchnorm_standardized_batch_unchanged():
    x = np.array([[-1.0, 2.0], [1.0, -2.0]])  # per-feature mean 0, biased var 1 and 4
    x[:, 1] /= 2.0
    out, _ = L.batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), True, eps=0.0)
    np.testing.assert_allclose(out, x, rtol=1e-12)


def test_batchnorm_gamma_zero():
    rng = np.random.default_rng(6)
    out, _ = _bn(rng.normal(size=(4, 3, 2, 2)), np.zeros(3), np.array([1.0, 2.0, 3.0]))
    for k in range(3):
        assert np.all(out[:, k] == k + 1.0)


def test_batchnorm_batch_of_one_rejected():
    with pytest.raises(L.ConfigError):
        _bn(np.zeros((1, 3)), np.ones(3), np.zeros(3))


def test_batchnorm_running_stats_and_eval():
    rng = np.random.default_rng(7)
    x = rng.normal(3.0, 2.0, size=(8, 2, 3, 3))
    rm, rv = np.zeros(2), np.ones(2)
    L.batchnorm_forward(x, np.ones(2), np.zeros(2), rm, rv, True, momentum=0.1)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-12)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)), rtol=1e-12)
    out, _ = L.batchnorm_forward(x, np.ones(2), np.zeros(2), rm, rv, False, eps=0.0)
    np.testing.assert_allclose(out, (x - rm[None, :, None, None]) / np.sqrt(rv)[None, :, None, None])


@pytest.mark.parametrize("trial", range(N_RANDOM))
@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_finite_differences(trial, train):
    rng = np.random.default_rng(600 + trial)
    shape = (4, 3, 2, 2) if trial % 2 else (5, 3)
    x = rng.uniform(-1, 1, shape)
    gamma = rng.uniform(0.5, 1.5, 3)
    beta = rng.uniform(-1, 1, 3)
    rm, rv = rng.uniform(-0.5, 0.5, 3), rng.uniform(0.5, 1.5, 3)
    proj = rng.normal(size=shape)

    def loss():
        out, _ = L.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), train)
        return float(np.sum(proj * out))

    _, cache = L.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), train)
    gx, gg, gb = L.batchnorm_backward(proj, cache)
    assert max_rel_error(gx, central_diff(loss, x)) <= REL_TOL
    assert max_rel_error(gg, central_diff(loss, gamma)) <= REL_TOL
    assert max_rel_error(gb, central_diff(loss, beta)) <= REL_TOL


# ---------------------------------------------------------------- gradient reversal


def test_grad_reversal():
    x = np.array([1.0, -2.0, 3.5])
    for lam in (0.0, 0.5, 1.0, 7.0):
        assert np.array_equal(L.grad_reversal_forward(x, lam), x)
    np.testing.assert_array_equal(L.grad_reversal_backward(x, 1.0), -x)
    assert not L.grad_reversal_backward(x, 0.0).any()


@pytest.mark.parametrize("trial", range(N_RANDOM))
def test_grad_reversal_backward_is_negated_scaled_derivative(trial):
    # backward must equal -lam * d(loss)/d(x) of the identity forward
    rng = np.random.default_rng(700 + trial)
    x = rng.uniform(-1, 1, (2, 5))
    lam = rng.uniform(0, 2)
    proj = rng.normal(size=x.shape)
    num = central_diff(lambda: float(np.sum(proj * L.grad_reversal_forward(x, lam))), x)
    assert max_rel_error(L.grad_reversal_backward(proj, lam), -lam * num) <= REL_TOL


# ---------------------------------------------------------------- param count


@pytest.mark.parametrize("k,n,c,expected", [(16, 3, 1, 160), (1, 1, 1, 2), (8, 5, 3, 608)])
def test_param_count(k, n, c, expected):
    assert L.param_count(k, c, n) == expected


@pytest.mark.parametrize("k,n,c", [(16, 3, 1), (1, 1, 1), (8, 5, 3), (4, 7, 2)])
def test_param_count_equals_scalar_count(k, n, c):
    conv = L.Conv(k, n, 1, n // 2)
    conv.init_params((c, 9, 9), np.random.default_rng(0))
    assert conv.param_count() == sum(v.size for v in conv.params.values())


def test_layer_from_config_rejects_unknown():
    with pytest.raises(L.ConfigError):
        L.layer_from_config({"type": "dropout"})
    with pytest.raises(L.ConfigError):
        L.layer_from_config({"type": "conv", "out": 2, "kernal": 3})
