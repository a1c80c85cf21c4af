"""Learnable global filtering in the 2-D frequency domain.

The filter is stored on the half spectrum ``[H, W//2 + 1, C, 2]`` (real and
imaginary planes) and expanded to the full ``[H, W, C]`` grid by conjugate
mirroring, so ``K[-u, -v] == conj(K[u, v])`` holds for every parameter value
and the filtered map is real.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import LayerNorm, Mlp, Module
from .spectral import Spectrum, fft2, idft2, mirror_index
from .tensor import Tensor


@dataclass(frozen=True)
class _ExpandPlan:
    src: np.ndarray        # flat half-spectrum index per full bin
    src_m: np.ndarray      # same, for the mirrored bin
    sign: np.ndarray       # +1 stored directly, -1 conjugated
    sign_m: np.ndarray


def _expand_plan(H: int, W: int) -> _ExpandPlan:
    wh = W // 2 + 1
    u = np.arange(H)[:, None]
    v = np.arange(W)[None, :]
    direct = v < wh
    src = np.where(direct, u * wh + np.minimum(v, wh - 1), ((-u) % H) * wh + (W - v) % W)
    sign = np.broadcast_to(np.where(direct, 1.0, -1.0), src.shape)
    src, sign = src.reshape(-1), sign.reshape(-1)
    mirror = mirror_index(H, W)
    return _ExpandPlan(src, src[mirror], sign[:, None], sign[mirror][:, None])


def expand_half_spectrum(half: Tensor, width: int) -> Tensor:
    """``[H, W//2+1, C, 2]`` real planes -> Hermitian ``[H, W, C]`` complex filter."""
    H, wh, C, two = half.shape
    if two != 2 or wh != width // 2 + 1:
        raise ShapeError(f"half spectrum {half.shape} inconsistent with width {width}")
    plan = _expand_plan(H, width)
    flat = T.reshape(half, (H * wh, C, 2))
    re = T.getitem(flat, (Ellipsis, 0))
    im = T.getitem(flat, (Ellipsis, 1))
    k_re = (T.take(re, plan.src, 0) + T.take(re, plan.src_m, 0)) * 0.5
    k_im = (T.take(im, plan.src, 0) * plan.sign - T.take(im, plan.src_m, 0) * plan.sign_m) * 0.5
    k = T.complex_(k_re, k_im)
    return T.reshape(k, (H, width, C))


class GlobalFilter(Module):
    """Filter ``K`` plus the residual scale ``alpha1``."""

    def __init__(self, height, width, channels, eps=0.02, alpha_init=1.0, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.height, self.width, self.channels = height, width, channels
        wh = width // 2 + 1
        half = np.empty((height, wh, channels, 2))
        half[..., 0] = 1.0 + eps * rng.standard_normal((height, wh, channels))
        half[..., 1] = eps * rng.standard_normal((height, wh, channels))
        self.K = T.parameter(half, dtype=dtype)
        self.alpha1 = T.parameter(alpha_init, no_decay=True, dtype=dtype)

    def full_filter(self) -> Tensor:
        return expand_half_spectrum(self.K, self.width)

    def filter_only(self, z) -> Tensor:
        """IFFT(K * FFT(z)) without the residual term."""
        z = T.as_tensor(z)
        if z.shape[-3:] != (self.height, self.width, self.channels):
            raise ShapeError(f"filter built for {(self.height, self.width, self.channels)}, got {z.shape[-3:]}")
        spec = fft2(z) * self.full_filter()
        return idft2(Spectrum(spec, "full", tuple(z.shape)))

    def set_filter(self, full: np.ndarray) -> None:
        """Overwrite K from a full-layout array (must already be Hermitian)."""
        wh = self.width // 2 + 1
        full = np.asarray(full)
        self.K.data = np.stack([full[:, :wh].real, full[:, :wh].imag], axis=-1).astype(self.K.dtype)


def filter_init(shape, seed: int = 0, eps: float = 0.02, dtype=np.float64) -> GlobalFilter:
    H, W, C = shape
    return GlobalFilter(H, W, C, eps=eps, rng=np.random.default_rng(seed), dtype=dtype)


class SpectralAttention(GlobalFilter):
    """MLP(LN(IFFT(K * FFT(LN(x))) + alpha1 * x)).

    ``bypass=True`` drops both norms and the MLP (diagnostic mode).
    """

    def __init__(self, height, width, channels, mlp_ratio=2, eps=0.02, alpha_init=1.0, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(height, width, channels, eps, alpha_init, rng, dtype)
        self.ln1 = LayerNorm(channels, dtype=dtype)
        self.ln2 = LayerNorm(channels, dtype=dtype)
        self.mlp = Mlp(channels, mlp_ratio, rng=rng, dtype=dtype)

    def forward(self, x, bypass: bool = False):
        x = T.as_tensor(x)
        z = x if bypass else self.ln1(x)
        u = self.filter_only(z) + self.alpha1 * x
        return u if bypass else self.mlp(self.ln2(u))


def swsa_forward(x1, f: GlobalFilter, mlp=None, ln=None, ln_out=None) -> Tensor:
    """Functional form; passing ``None`` for the norms/MLP bypasses them."""
    x1 = T.as_tensor(x1)
    z = ln(x1) if ln is not None else x1
    u = f.filter_only(z) + f.alpha1 * x1
    if ln_out is not None:
        u = ln_out(u)
    return mlp(u) if mlp is not None else u


def export_filter_csv(f: GlobalFilter, path) -> None:
    """Per-channel |K| on the full grid: rows ``(channel, u, v, magnitude)``."""
    mag = np.abs(f.full_filter().data)
    H, W, C = mag.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "u", "v", "magnitude"])
        for c in range(C):
            for u in range(H):
                for v in range(W):
                    writer.writerow([c, u, v, repr(float(mag[u, v, c]))])
