import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from cnn_htsvm.cnn import (ShallowCNN, cnn_train, conv_forward, extract_features,
                           max_pool, pooled_shape, softmax)

from oracles import finite_difference_check


def naive_conv(img, kernels, bias):
    M, kh, kw = kernels.shape
    H, W = img.shape
    out = np.zeros((M, H - kh + 1, W - kw + 1))
    for m in range(M):
        for r in range(H - kh + 1):
            for c in range(W - kw + 1):
                out[m, r, c] = max(0.0, np.sum(img[r:r + kh, c:c + kw] * kernels[m]) + bias[m])
    return out


def toy_images(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 128, 5)) * 0.2
    y = np.array(["top", "bottom"] * (n // 2), dtype=object)
    X[y == "top", :64] += 0.8
    X[y == "bottom", 64:] += 0.8
    return X, y


# -- layers ----------------------------------------------------------------------

def test_conv_matches_naive_loops():
    rng = np.random.default_rng(0)
    imgs = rng.normal(size=(3, 9, 4))
    k = rng.normal(size=(2, 3, 2))
    b = rng.normal(size=2)
    out = conv_forward(imgs, k, b)
    for i in range(3):
        np.testing.assert_allclose(out[i], naive_conv(imgs[i], k, b), atol=1e-12)


def test_conv_shapes_and_zero_input():
    k = np.random.default_rng(1).normal(size=(38, 29, 1))
    out = conv_forward(np.zeros((2, 128, 5)), k, np.zeros(38))
    assert out.shape == (2, 38, 100, 5)
    assert np.all(out == 0)


def test_conv_delta_kernel_is_shifted_relu_crop():
    img = np.random.default_rng(2).normal(size=(1, 10, 3))
    k = np.zeros((1, 3, 1))
    k[0, 1, 0] = 1.0
    out = conv_forward(img, k, np.zeros(1))
    np.testing.assert_array_equal(out[0, 0], np.maximum(img[0, 1:9], 0))


def test_conv_rejects_oversized_mask():
    with pytest.raises(ValueError):
        conv_forward(np.zeros((1, 5, 5)), np.zeros((1, 6, 1)), np.zeros(1))


def test_pool_shapes_and_semantics():
    maps = np.random.default_rng(3).random((1, 2, 100, 5))
    pooled, _ = max_pool(maps, 5, 5)
    assert pooled.shape == (1, 2, 20, 1)
    assert pooled_shape(100, 5, 5, 5) == (20, 1)
    np.testing.assert_array_equal(max_pool(np.full((4, 6), 3.0), 2, 3)[0], np.full((2, 2), 3.0))
    m = np.zeros((10, 5))
    m[7, 3] = 9.0
    p, arg = max_pool(m, 5, 5)
    assert p[1, 0] == 9.0 and p[0, 0] == 0.0
    assert arg[1, 0] == 2 * 5 + 3


def test_pool_ragged_edges_padded_with_minus_inf():
    m = -np.arange(1.0, 8.0).reshape(7, 1)
    p, _ = max_pool(m, 5, 2)
    assert p.shape == (2, 1)
    np.testing.assert_array_equal(p[:, 0], [-1.0, -6.0])


def test_translation_within_block_keeps_pooled_value():
    img = np.zeros((1, 40, 1))
    img[0, 11, 0] = 1.0
    k = np.zeros((1, 1, 1))
    k[0, 0, 0] = 1.0
    base, _ = max_pool(conv_forward(img, k, np.zeros(1)), 5, 1)
    shifted = np.roll(img, 1, axis=1)     # spike 11 -> 12, same 10..14 block
    moved, _ = max_pool(conv_forward(shifted, k, np.zeros(1)), 5, 1)
    np.testing.assert_array_equal(base, moved)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_softmax_sums_to_one(seed):
    z = np.random.default_rng(seed).normal(scale=30, size=(5, 40))
    assert np.all(np.abs(softmax(z).sum(axis=1) - 1) < 1e-9)


# -- gradients -------------------------------------------------------------------

@pytest.mark.parametrize("pool", [(2, 3), (3, 2)])
def test_gradient_check_micro_network(pool):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(6, 8, 3))
    y_idx = np.array([0, 1, 2, 0, 1, 2])
    net = ShallowCNN(num_maps=3, mask_rows=3, mask_cols=1,
                     pool_rows=pool[0], pool_cols=pool[1], random_state=5)
    net.initialize((8, 3), ["a", "b", "c"])
    net.conv_bias_ = rng.normal(scale=0.1, size=3)
    err = finite_difference_check(
        net, lambda: net.loss_and_gradients(X, y_idx),
        ["kernels_", "conv_bias_", "head_weights_", "head_bias_"])
    assert err < 1e-4


# -- training --------------------------------------------------------------------

def test_feature_dim_default_is_760():
    net = ShallowCNN().initialize((128, 5), ["a", "b"])
    assert net.feature_dim_ == 760
    X, y = toy_images(20)
    feats = extract_features(X, net)
    assert feats.shape == (20, 760)


def test_scores_sum_to_one_and_zero_weights_uniform():
    X, _ = toy_images(10)
    net = ShallowCNN(num_maps=4).initialize((128, 5), list("abcd"))
    _, scores = net.forward(X)
    np.testing.assert_allclose(scores.sum(axis=1), 1, atol=1e-9)
    net.head_weights_[:] = 0
    np.testing.assert_allclose(net.forward(X)[1], 0.25, atol=1e-15)


def test_zero_image_features_equal_bias_relu():
    net = ShallowCNN(num_maps=5).initialize((128, 5), ["a", "b"])
    net.conv_bias_ = np.array([0.0, 0.3, 1.2, 0.0, 2.0])
    feats = net.transform(np.zeros((2, 128, 5)))
    np.testing.assert_array_equal(feats.reshape(2, 5, -1),
                                  np.broadcast_to(net.conv_bias_[None, :, None], (2, 5, 20)))


def test_toy_separable_reaches_99_percent():
    X, y = toy_images()
    net = cnn_train(X, y, epochs=20)
    assert np.mean(net.predict(X) == y) >= 0.99
    assert net.loss_curve_[-1] <= net.loss_curve_[0]


def test_zero_learning_rate_keeps_weights():
    X, y = toy_images(40)
    net = ShallowCNN(num_maps=4, learning_rate=0.0, epochs=3).fit(X, y)
    ref = ShallowCNN(num_maps=4).initialize((128, 5), net.classes_)
    np.testing.assert_array_equal(net.kernels_, ref.kernels_)
    np.testing.assert_array_equal(net.head_weights_, ref.head_weights_)
    assert len(set(net.loss_curve_)) == 1


def test_same_seed_bitwise_identical():
    X, y = toy_images(60)
    a = ShallowCNN(num_maps=6, epochs=2).fit(X, y)
    b = clone(a).fit(X, y)
    for name in ("kernels_", "conv_bias_", "head_weights_", "head_bias_"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    f = a.transform(np.repeat(X[:1], 3, axis=0))
    assert np.all(f == f[0])


def test_divergence_reported():
    X, y = toy_images(40)
    with np.errstate(all="ignore"), pytest.raises(FloatingPointError, match="non-finite|diverged"):
        ShallowCNN(num_maps=4, learning_rate=1e250, epochs=5).fit(X, y)


def test_shape_and_config_errors():
    X, y = toy_images(10)
    net = ShallowCNN(num_maps=2, epochs=1).fit(X, y)
    with pytest.raises(ValueError, match="shape"):
        net.transform(np.zeros((1, 64, 5)))
    with pytest.raises(ValueError, match="mask"):
        ShallowCNN(mask_rows=200).fit(X, y)
    with pytest.raises(ValueError):
        ShallowCNN().fit(np.zeros((0, 128, 5)), [])


@pytest.mark.parametrize("rows,cols,mr,mc,pr,pc", [
    (128, 5, 29, 1, 5, 5), (64, 7, 5, 3, 4, 2), (20, 3, 20, 3, 3, 3), (33, 4, 2, 2, 7, 1)])
def test_feature_dim_invariant(rows, cols, mr, mc, pr, pc):
    net = ShallowCNN(num_maps=3, mask_rows=mr, mask_cols=mc, pool_rows=pr, pool_cols=pc)
    net.initialize((rows, cols), ["a", "b"])
    hp, wp = -(-(rows - mr + 1) // pr), -(-(cols - mc + 1) // pc)
    assert net.feature_dim_ == 3 * hp * wp
    assert net.transform(np.zeros((2, rows, cols))).shape == (2, net.feature_dim_)
