import numpy as np
import pytest

from uwenhance import tensor as T
from uwenhance.errors import ConfigError, ShapeError
from uwenhance.network import (EnhancementNet, NetworkConfig, config_from_dict, count_params, gated_fuse,
                               parameter_breakdown, preset)


def tiny(**kw):
    base = dict(height=8, width=8, base_channels=2, downsamples=1, num_dcssb=2, blocks_per_dcssb=1,
                state_dim=2, dtype="real64")
    base.update(kw)
    return NetworkConfig(**base)


def test_output_range_and_shape(rng):
    net = EnhancementNet(tiny())
    y = net(T.Tensor(rng.uniform(0, 1, (2, 8, 8, 3))))
    assert y.shape == (2, 8, 8, 3)
    assert np.all((y.data > 0) & (y.data < 1))
    assert net.predict(rng.uniform(0, 1, (8, 8, 3))).shape == (8, 8, 3)


def test_deep_shape():
    assert tiny().deep_shape == (4, 4, 4)
    assert preset("full").deep_shape == (64, 64, 64)


def test_dense_connectivity_widths():
    net = EnhancementNet(tiny(num_dcssb=3))
    groups = net.groups()
    assert [g.reduce.weight.shape[1] for g in groups] == [4, 8, 12]


def test_gated_fusion_weights(rng):
    feats = [T.Tensor(rng.standard_normal((2, 2, 1))) for _ in range(3)]
    w = T.Tensor(np.array([0.5, -1.0, 2.0]))
    expected = 0.5 * feats[0].data - feats[1].data + 2 * feats[2].data
    np.testing.assert_allclose(gated_fuse(feats, w).data, expected)


def test_same_seed_same_weights():
    a, b = EnhancementNet(tiny(seed=3)), EnhancementNet(tiny(seed=3))
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb
        np.testing.assert_array_equal(va, vb)


def test_parameter_counts():
    assert count_params(tiny()) == EnhancementNet(tiny()).num_parameters()
    assert count_params(tiny(block_mode="parallel")) < count_params(tiny(block_mode="serial"))
    br = parameter_breakdown(EnhancementNet(tiny()))
    assert list(br) == ["extract", "dcssb1", "dcssb2", "fusion", "rec"]
    assert sum(br.values()) == count_params(tiny())


def test_validation_errors():
    with pytest.raises(ConfigError) as exc:
        tiny(height=6, downsamples=2).validate()
    assert exc.value.key_path == "height"
    with pytest.raises(ConfigError) as exc:
        tiny(block_mode="weird").validate()
    assert exc.value.key_path == "block_mode"
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"widht": 4})
    assert exc.value.key_path == "network.widht"
    with pytest.raises(ConfigError):
        preset("huge")


def test_wrong_input_extent(rng):
    net = EnhancementNet(tiny())
    with pytest.raises(ShapeError):
        net(T.Tensor(np.zeros((1, 16, 16, 3))))
    with pytest.raises(ConfigError):
        net(T.Tensor(np.zeros((1, 7, 8, 3))))


def test_real32_forward():
    net = EnhancementNet(tiny(dtype="real32"))
    assert net(T.Tensor(np.full((1, 8, 8, 3), 0.5))).dtype == np.float32


def test_end_to_end_gradients():
    from uwenhance.gradcheck import check_network
    res = check_network(seed=0, n_scalars=20)
    assert all(r.passed for r in res), [(r.name, r.error) for r in res]
