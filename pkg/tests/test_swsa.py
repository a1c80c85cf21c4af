import csv

import numpy as np
import pytest

from uwenhance import tensor as T
from uwenhance.errors import ShapeError
from uwenhance.spectral import hermitian_defect
from uwenhance.spectral_filter import (GlobalFilter, SpectralAttention, expand_half_spectrum, export_filter_csv,
                                       filter_init, swsa_forward)


@pytest.mark.parametrize("H,W", [(4, 4), (5, 6), (6, 5), (3, 7)])
def test_expanded_filter_is_hermitian(H, W, rng):
    f = GlobalFilter(H, W, 2, eps=0.5, rng=rng)
    K = f.full_filter().data
    assert K.shape == (H, W, 2)
    assert hermitian_defect(K) <= 1e-12


def test_filter_matches_numpy_pipeline(rng):
    f = GlobalFilter(6, 5, 3, eps=0.3, rng=rng)
    z = rng.standard_normal((2, 6, 5, 3))
    K = f.full_filter().data
    ref = np.fft.ifft2(np.fft.fft2(z, axes=(1, 2)) * K, axes=(1, 2))
    assert np.abs(ref.imag).max() <= 1e-12
    np.testing.assert_allclose(f.filter_only(T.Tensor(z)).data, ref.real, atol=1e-12)


def test_filter_is_circular_convolution(rng):
    # K = DFT(kernel) turns the filter into circular convolution with the kernel
    H, W = 4, 6
    kernel = rng.standard_normal((H, W, 1))
    f = GlobalFilter(H, W, 1)
    f.set_filter(np.fft.fft2(kernel, axes=(0, 1)))
    z = rng.standard_normal((H, W, 1))
    ref = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            for a in range(H):
                for b in range(W):
                    ref[i, j] += kernel[a, b, 0] * z[(i - a) % H, (j - b) % W, 0]
    np.testing.assert_allclose(f.filter_only(T.Tensor(z)).data[..., 0], ref, atol=1e-12)


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_identity_mode_reproduces_input(dtype, rng):
    att = SpectralAttention(8, 8, 4, rng=rng, dtype=dtype)
    att.set_filter(np.ones((8, 8, 4)))
    att.alpha1.data = np.zeros((), dtype=dtype)
    x = rng.uniform(0, 1, (2, 8, 8, 4)).astype(dtype)
    assert np.abs(att(T.Tensor(x), bypass=True).data - x).max() <= 1e-6
    f = filter_init((8, 8, 4))
    f.set_filter(np.ones((8, 8, 4)))
    f.alpha1.data = np.zeros(())
    assert np.abs(swsa_forward(x.astype(np.float64), f).data - x).max() <= 1e-6


def test_residual_scale_only(rng):
    # K = 0 leaves alpha1 * x
    att = SpectralAttention(4, 4, 2, rng=rng)
    att.set_filter(np.zeros((4, 4, 2), dtype=complex))
    att.alpha1.data = np.array(0.5)
    x = rng.standard_normal((4, 4, 2))
    np.testing.assert_allclose(att(T.Tensor(x), bypass=True).data, 0.5 * x)


def test_full_forward_shape_and_check(rng):
    att = SpectralAttention(4, 6, 3, rng=rng)
    assert att(T.Tensor(rng.standard_normal((2, 4, 6, 3)))).shape == (2, 4, 6, 3)
    with pytest.raises(ShapeError):
        att(T.Tensor(np.ones((2, 4, 4, 3))))
    with pytest.raises(ShapeError):
        expand_half_spectrum(att.K, 8)


def test_filter_gradient_stays_consistent(rng):
    from uwenhance.gradcheck import check_swsa
    bad = [(r.name, r.error) for r in check_swsa(seed=4) if not r.passed]
    assert not bad


def test_filter_csv(tmp_path, rng):
    f = GlobalFilter(3, 4, 2, eps=0.2, rng=rng)
    export_filter_csv(f, tmp_path / "k.csv")
    with open(tmp_path / "k.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 24
    K = np.abs(f.full_filter().data)
    r = rows[1 * 12 + 2 * 4 + 3]
    assert (r["channel"], r["u"], r["v"]) == ("1", "2", "3")
    assert float(r["magnitude"]) == K[2, 3, 1]
