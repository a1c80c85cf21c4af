import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uwenhance import layers as Lr
from uwenhance import tensor as T
from uwenhance.errors import ShapeError


def conv_loops(x, w, b, stride, pad):
    """Four nested loops over output pixels and channels; cross-correlation."""
    B, H, W, cin = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, Ho, Wo, cout))
    for n in range(B):
        for i in range(Ho):
            for j in range(Wo):
                for o in range(cout):
                    patch = xp[n, i * stride:i * stride + k, j * stride:j * stride + k, :]
                    out[n, i, j, o] = np.sum(patch * w[o].transpose(1, 2, 0)) + (b[o] if b is not None else 0)
    return out


@pytest.mark.parametrize("k,stride,pad", [(1, 1, 0), (3, 1, 1), (3, 2, 1), (3, 1, 0), (5, 1, 2), (2, 2, 0)])
def test_conv_matches_loop_oracle(k, stride, pad, rng):
    x = rng.standard_normal((2, 7, 6, 3))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    got = Lr.conv2d(T.Tensor(x), T.Tensor(w), T.Tensor(b), stride, pad).data
    assert np.abs(got - conv_loops(x, w, b, stride, pad)).max() <= 1e-9


def test_conv_unbatched_input(rng):
    x = rng.standard_normal((5, 5, 2))
    w = rng.standard_normal((3, 2, 3, 3))
    got = Lr.conv2d(T.Tensor(x), T.Tensor(w), padding=1).data
    np.testing.assert_allclose(got, conv_loops(x[None], w, None, 1, 1)[0], atol=1e-12)


def test_depthwise_matches_grouped_loops(rng):
    x = rng.standard_normal((1, 5, 5, 3))
    w = rng.standard_normal((3, 1, 3, 3))
    got = Lr.depthwise_conv2d(T.Tensor(x), T.Tensor(w), padding=1).data
    for c in range(3):
        ref = conv_loops(x[..., c:c + 1], w[c:c + 1], None, 1, 1)[..., 0]
        np.testing.assert_allclose(got[..., c], ref, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        Lr.conv2d(T.Tensor(np.ones((1, 4, 4, 2))), T.Tensor(np.ones((3, 3, 3, 3))), padding=1)


def test_pool_and_upsample_values():
    x = np.arange(16.0).reshape(1, 4, 4, 1)
    np.testing.assert_array_equal(Lr.maxpool2(T.Tensor(x)).data[0, ..., 0], [[5, 7], [13, 15]])
    np.testing.assert_array_equal(Lr.avgpool2(T.Tensor(x)).data[0, ..., 0], [[2.5, 4.5], [10.5, 12.5]])
    up = Lr.upsample2(T.Tensor(np.array([[[[1.0], [2.0]]]]))).data
    np.testing.assert_array_equal(up[0, ..., 0], [[1, 1, 2, 2], [1, 1, 2, 2]])
    with pytest.raises(ShapeError):
        Lr.avgpool2(T.Tensor(np.ones((1, 3, 4, 1))))


def test_bilinear_preserves_constants(rng):
    x = np.full((1, 3, 5, 2), 0.7)
    np.testing.assert_allclose(Lr.upsample2(T.Tensor(x), "bilinear").data, 0.7, atol=1e-15)


def test_layer_norm_statistics(rng):
    x = rng.standard_normal((2, 3, 3, 8)) * 4 + 2
    y = Lr.layer_norm(T.Tensor(x)).data
    np.testing.assert_allclose(y.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(-1), 1, atol=1e-4)


def test_batch_norm_train_and_eval(rng):
    bn = Lr.BatchNorm(3)
    x = rng.standard_normal((4, 3, 3, 3)) * 2 + 1
    y = bn(T.Tensor(x)).data
    np.testing.assert_allclose(y.mean(axis=(0, 1, 2)), 0, atol=1e-12)
    mu = x.mean(axis=(0, 1, 2))
    np.testing.assert_allclose(bn.running_mean, 0.1 * mu)
    bn.eval()
    y2 = bn(T.Tensor(x)).data
    expected = (x - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
    np.testing.assert_allclose(y2, expected)


def test_module_state_round_trip(rng):
    a = Lr.conv_block(3, 4, rng, np.float64)
    b = Lr.conv_block(3, 4, np.random.default_rng(99), np.float64)
    a(T.Tensor(rng.standard_normal((2, 4, 4, 3))))  # move the running stats
    b.load_state_dict(a.state_dict())
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb
        np.testing.assert_array_equal(va, vb)
    names = [n for n, _ in a.named_parameters()]
    assert names == ["0.scale", "0.shift", "2.weight", "2.bias"]
    assert a.num_parameters() == 3 + 3 + 4 * 3 * 9 + 4


def test_load_state_dict_shape_check():
    layer = Lr.Conv2d(2, 3, 3)
    with pytest.raises(ShapeError):
        layer.load_state_dict({"weight": np.zeros((3, 2, 1, 1)), "bias": np.zeros(3)})
    with pytest.raises(KeyError):
        layer.load_state_dict({"weight": np.zeros((3, 2, 3, 3))})


def test_train_eval_flag_propagates():
    seq = Lr.conv_block(2, 2, np.random.default_rng(0), np.float64)
    seq.eval()
    assert all(not layer.training for layer in seq.layers)
    seq.train()
    assert all(layer.training for layer in seq.layers)


def test_layer_gradient_suite():
    from uwenhance.gradcheck import check_layers
    bad = [(r.name, r.error) for r in check_layers(seed=7) if not r.passed]
    assert not bad


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_conv_is_linear_in_input(cin, cout, seed):
    rng = np.random.default_rng(seed)
    w = T.Tensor(rng.standard_normal((cout, cin, 3, 3)))
    x1, x2 = rng.standard_normal((2, 1, 4, 4, cin))
    f = lambda v: Lr.conv2d(T.Tensor(v), w, padding=1).data
    np.testing.assert_allclose(f(2 * x1 - x2), 2 * f(x1) - f(x2), atol=1e-10)


@given(st.integers(0, 2 ** 31))
def test_pool_upsample_adjoint(seed):
    # <avgpool(x), y> == <x, upsample(y)> / 4
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 4, 6, 2))
    y = rng.standard_normal((1, 2, 3, 2))
    lhs = (Lr.avgpool2(T.Tensor(x)).data * y).sum()
    rhs = (x * Lr.upsample2(T.Tensor(y)).data).sum() / 4
    assert abs(lhs - rhs) <= 1e-10
