import numpy as np
import pytest

from uwenhance import tensor as T
from uwenhance.block import BLOCK_MODES, SSBlock, SSBlockConfig
from uwenhance.errors import ConfigError, ShapeError
from uwenhance.network import count_params


def make(mode, rng, **kw):
    return SSBlock(SSBlockConfig(channels=4, height=4, width=4, mode=mode, state_dim=2, **kw), rng=rng)


@pytest.mark.parametrize("mode", BLOCK_MODES)
def test_shape_preserved(mode, rng):
    blk = make(mode, rng)
    x = rng.standard_normal((2, 4, 4, 4))
    y = blk(T.Tensor(x))
    assert y.shape == x.shape and np.all(np.isfinite(y.data))


def test_zero_fuse_gives_identity(rng):
    blk = make("parallel", rng)
    blk.fuse.weight.data[:] = 0
    blk.fuse.bias.data[:] = 0
    x = rng.standard_normal((1, 4, 4, 4))
    np.testing.assert_array_equal(blk(T.Tensor(x)).data, x)


def test_parallel_branches_see_disjoint_halves(rng):
    # perturbing the scan half of conv_in's output must leave the spectral half unchanged
    blk = make("parallel", rng)
    x = T.Tensor(rng.standard_normal((1, 4, 4, 4)))
    t = blk.conv_in(x)
    x1, x2 = T.split(t, 2, axis=-1)
    y1 = blk.swsa(x1).data
    x2b = T.Tensor(x2.data + 1.0)
    y = T.concat([blk.swsa(x1), blk.mcss(x2b)], axis=-1).data
    np.testing.assert_array_equal(y[..., :2], y1)


def test_parallel_cheaper_than_serial():
    base = dict(channels=16, height=8, width=8, state_dim=4)
    assert count_params(SSBlockConfig(mode="parallel", **base)) < count_params(SSBlockConfig(mode="serial", **base))


def test_config_errors():
    with pytest.raises(ConfigError) as exc:
        SSBlockConfig(channels=3, height=4, width=4).validate()
    assert exc.value.key_path == "channels"
    with pytest.raises(ConfigError) as exc:
        SSBlockConfig(channels=4, height=4, width=4, mode="nope").validate()
    assert exc.value.key_path == "mode"
    with pytest.raises(ConfigError):
        SSBlockConfig(channels=4, height=4, width=4, scan_mode="zigzag").validate()


def test_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        make("mcss", rng)(T.Tensor(np.ones((1, 4, 4, 6))))


def test_ss2d_has_fewer_scan_parameters(rng):
    assert make("mcss", rng, scan_mode="ss2d").num_parameters() < make("mcss", rng).num_parameters()


def test_block_gradient_suite():
    from uwenhance.gradcheck import check_block
    bad = [(r.name, r.error) for r in check_block(seed=1, modes=("parallel", "baseline")) if not r.passed]
    assert not bad
