import numpy as np
import pytest

import deflash.nn.functional as F
from gradcheck import check_coords

TOL = 1e-4


def naive_conv(x, w, b, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    out = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = b[oc]
                    for ic in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                acc += xp[ni, ic, i + ki, j + kj] * w[oc, ic, ki, kj]
                    out[ni, oc, i, j] = acc
    return out


def test_conv_identity_kernel(rng):
    x = rng.random((2, 1, 5, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1
    np.testing.assert_array_equal(F.conv2d_forward(x, w, np.zeros(1)), x)


def test_conv_box_sum():
    x = np.full((1, 1, 5, 5), 0.3)
    out = F.conv2d_forward(x, np.ones((1, 1, 3, 3)), np.zeros(1))
    assert out[0, 0, 2, 2] == pytest.approx(2.7)


def test_conv_matches_naive_loops(rng):
    x = rng.random((1, 2, 5, 5)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    for padding, pad in (("same", 1), ("valid", 0)):
        out = F.conv2d_forward(x, w, b, padding=padding)
        np.testing.assert_allclose(out, naive_conv(x.astype(np.float64), w, b, pad), atol=1e-5)


def test_conv_same_preserves_size(rng):
    x = rng.random((2, 3, 7, 9))
    assert F.conv2d_forward(x, rng.random((4, 3, 3, 3)), np.zeros(4)).shape == (2, 4, 7, 9)


def test_conv_errors(rng):
    with pytest.raises(ValueError):
        F.conv2d_forward(rng.random((1, 2, 4, 4)), rng.random((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ValueError):
        F.conv2d_forward(rng.random((1, 3, 4, 4)), rng.random((1, 3, 3, 3)), np.zeros(1), stride=0)


@pytest.mark.parametrize("stride,padding", [(1, "same"), (2, 1), (1, "valid")])
def test_conv_gradients(rng, stride, padding):
    x = rng.standard_normal((1, 2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    u = rng.standard_normal(F.conv2d_forward(x, w, b, stride, padding).shape)

    def loss():
        return float((F.conv2d_forward(x, w, b, stride, padding) * u).sum())

    gx, gw, gb = F.conv2d_backward(x, w, u, stride, padding)
    assert check_coords(loss, w, gw, rng) < TOL
    assert check_coords(loss, x, gx, rng) < TOL
    assert check_coords(loss, b, gb, rng, n=3) < TOL
    np.testing.assert_allclose(gb, u.sum(axis=(0, 2, 3)))


def test_conv_zero_upstream_gives_zero_gradients(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    grads = F.conv2d_backward(x, w, np.zeros((1, 3, 4, 4)))
    assert all(np.all(g == 0) for g in grads)


def test_deconv_shape_and_adjoint(rng):
    x = rng.standard_normal((1, 1, 3, 3))
    w = rng.standard_normal((1, 1, 4, 4))
    y = F.deconv2d_forward(x, w, None, stride=2, padding=1)
    assert y.shape == (1, 1, 6, 6)
    # the transposed convolution is the adjoint of the strided convolution sharing its weights
    v = rng.standard_normal(y.shape)
    conv_v = F.conv2d_forward(v, w.transpose(1, 0, 2, 3), None, stride=2, padding=1)
    assert abs((y * v).sum() - (x * conv_v).sum()) < 1e-5
    # and equals that convolution's backward-input map
    gx, _, _ = F.conv2d_backward(np.zeros((1, 1, 6, 6)), w.transpose(1, 0, 2, 3), x, stride=2, padding=1)
    np.testing.assert_allclose(y, gx, atol=1e-5)


def test_deconv_doubles_size(rng):
    y = F.deconv2d_forward(rng.random((2, 4, 5, 7)), rng.random((4, 3, 4, 4)), np.zeros(3))
    assert y.shape == (2, 3, 10, 14)


def test_deconv_gradients(rng):
    x = rng.standard_normal((2, 3, 3, 3))
    w = rng.standard_normal((3, 2, 4, 4))
    b = rng.standard_normal(2)
    u = rng.standard_normal((2, 2, 6, 6))

    def loss():
        return float((F.deconv2d_forward(x, w, b) * u).sum())

    gx, gw, gb = F.deconv2d_backward(x, w, u)
    assert check_coords(loss, w, gw, rng) < TOL
    assert check_coords(loss, x, gx, rng) < TOL
    assert check_coords(loss, b, gb, rng, n=2) < TOL


def test_maxpool_forward():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    out, _ = F.maxpool_forward(x)
    np.testing.assert_array_equal(out[0, 0], [[5, 7], [13, 15]])
    const, _ = F.maxpool_forward(np.full((1, 2, 4, 6), 0.25))
    assert const.shape == (1, 2, 2, 3) and np.all(const == 0.25)


@pytest.mark.parametrize("shape", [(2, 2, 4, 6), (1, 2, 5, 3)])
def test_maxpool_gradients(rng, shape):
    # distinct values spaced far beyond the step keep every window free of ties
    x = (rng.permutation(np.prod(shape)).reshape(shape) * 0.01).astype(np.float64)
    out, idx = F.maxpool_forward(x)
    u = rng.standard_normal(out.shape)

    def loss():
        return float((F.maxpool_forward(x)[0] * u).sum())

    g = F.maxpool_backward(u, idx, x.shape)
    assert g.shape == x.shape
    assert check_coords(loss, x, g, rng, n=min(20, x.size)) < TOL
    # gradient lands only on window maxima
    assert np.count_nonzero(g) <= out.size


def _bn_inputs(rng):
    x = rng.standard_normal((1, 2, 3, 3)) * 2 + 0.5
    return x, rng.standard_normal(2) + 1.0, rng.standard_normal(2)


def test_batchnorm_train_normalizes(rng):
    x = rng.standard_normal((4, 3, 5, 5)) * 3 + 2
    rm, rv = np.zeros(3), np.ones(3)
    out, _ = F.batchnorm_forward(x, np.ones(3), np.zeros(3), rm, rv, train=True)
    assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-5
    assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() < 1e-4
    assert not np.all(rm == 0)  # running stats were updated


def test_batchnorm_identity_on_standardized_input(rng):
    x = rng.standard_normal((4, 2, 6, 6))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out, _ = F.batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), train=True)
    np.testing.assert_allclose(out, x, atol=1e-4)


def test_batchnorm_eval_uses_running_stats(rng):
    x = rng.standard_normal((2, 2, 3, 3))
    rm, rv = np.array([1.0, -1.0]), np.array([4.0, 0.25])
    out, _ = F.batchnorm_forward(x, np.ones(2), np.zeros(2), rm.copy(), rv.copy(), train=False)
    np.testing.assert_allclose(out, (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5))


def test_batchnorm_empty_batch():
    with pytest.raises(ValueError):
        F.batchnorm_forward(np.zeros((0, 2, 3, 3)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), train=True)


@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_gradients(rng, train):
    x, gamma, beta = _bn_inputs(rng)
    u = rng.standard_normal(x.shape)
    rm, rv = np.array([0.2, -0.1]), np.array([1.5, 0.7])

    def loss():
        out, _ = F.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), train=train)
        return float((out * u).sum())

    _, cache = F.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), train=train)
    gx, gg, gb = F.batchnorm_backward(u, gamma, cache)
    assert check_coords(loss, x, gx, rng) < TOL
    assert check_coords(loss, gamma, gg, rng, n=2) < TOL
    assert check_coords(loss, beta, gb, rng, n=2) < TOL


def test_activation_values():
    assert F.activation_forward(np.array([-1.0]), "leaky_relu")[0] == pytest.approx(-0.2)
    np.testing.assert_array_equal(F.activation_forward(np.array([-5.0, 3.0]), "relu"), [0.0, 3.0])
    assert F.activation_forward(np.array([0.0]), "sigmoid")[0] == 0.5
    big = F.activation_forward(np.array([-800.0, 800.0]), "sigmoid")
    assert np.all(np.isfinite(big))
    with pytest.raises(ValueError):
        F.activation_forward(np.zeros(1), "tanh")


@pytest.mark.parametrize("kind", ["relu", "leaky_relu", "sigmoid"])
def test_activation_gradients(rng, kind):
    x = rng.standard_normal((2, 3, 4, 4))
    x[np.abs(x) < 5e-3] += 0.01  # stay clear of the kink
    u = rng.standard_normal(x.shape)

    def loss():
        return float((F.activation_forward(x, kind) * u).sum())

    g = F.activation_backward(u, x, F.activation_forward(x, kind), kind)
    assert check_coords(loss, x, g, rng) < TOL


def test_concat_and_split(rng):
    a = rng.random((1, 64, 8, 8))
    b = rng.random((1, 32, 8, 8))
    c = F.concat_depth(a, b)
    assert c.shape == (1, 96, 8, 8)
    np.testing.assert_array_equal(c[:, :64], a)
    np.testing.assert_array_equal(c[:, 64:], b)
    ga, gb = F.split_depth(c * 2, 64)
    np.testing.assert_array_equal(ga, 2 * a)
    np.testing.assert_array_equal(gb, 2 * b)
    with pytest.raises(ValueError):
        F.concat_depth(a, rng.random((1, 32, 4, 8)))
