"""Differentiable 2-D discrete Fourier transforms over the spatial axes.

Images and feature maps are channels-last, so the transformed axes are
``(-3, -2)`` of an ``[..., H, W, C]`` array. The forward transform is
un-normalised and the inverse carries the ``1/(H*W)`` factor::

    X[u, v] = sum_{h,w} x[h, w] exp(-2j*pi*(u*h/H + v*w/W))

The numerical kernel is numpy's pocketfft; gradients use the adjoint of each
linear map (see :mod:`uwenhance.tensor` for the complex gradient convention).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError, SymmetryError
from .tensor import Tensor

AXES = (-3, -2)


def _complex_dtype(dtype):
    return np.complex64 if dtype in (np.float32, np.complex64) else np.complex128


def fft2(x) -> Tensor:
    """Full-layout 2-D DFT of a real or complex tensor."""
    x = T.as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"fft2 expects [..., H, W, C], got {x.shape}")
    H, W = x.shape[-3], x.shape[-2]
    out = np.fft.fft2(x.data, axes=AXES).astype(_complex_dtype(x.dtype), copy=False)
    # adjoint of the unnormalised DFT is H*W times the inverse DFT
    return T.custom_op(out, (x,), lambda g: (np.fft.ifft2(g, axes=AXES) * (H * W),))


def ifft2(z) -> Tensor:
    z = T.as_tensor(z)
    H, W = z.shape[-3], z.shape[-2]
    out = np.fft.ifft2(z.data, axes=AXES).astype(_complex_dtype(z.dtype), copy=False)
    return T.custom_op(out, (z,), lambda g: (np.fft.fft2(g, axes=AXES) / (H * W),))


def rfft2(x) -> Tensor:
    """Half-layout DFT of a real tensor: columns ``v = 0 .. W//2``."""
    x = T.as_tensor(x)
    if x.is_complex:
        raise ContractError("rfft2 needs a real input")
    H, W = x.shape[-3], x.shape[-2]
    out = np.fft.rfft2(x.data, axes=AXES).astype(_complex_dtype(x.dtype), copy=False)
    wh = out.shape[-2]

    def bw(g):
        full_shape = g.shape[:-2] + (W,) + g.shape[-1:]
        full = np.zeros(full_shape, dtype=g.dtype)
        full[..., :wh, :] = g
        return (np.fft.ifft2(full, axes=AXES).real * (H * W),)

    return T.custom_op(out, (x,), bw)


def irfft2(z, width: int) -> Tensor:
    """Inverse of :func:`rfft2`; ``width`` disambiguates odd/even W."""
    z = T.as_tensor(z)
    H = z.shape[-3]
    W = width
    out = np.fft.irfft2(z.data, s=(H, W), axes=AXES)
    out = out.astype(np.float32 if z.dtype == np.complex64 else np.float64, copy=False)
    # non-self-conjugate columns stand for two bins of the full spectrum
    weight = np.full(z.shape[-2], 2.0)
    weight[0] = 1.0
    if W % 2 == 0:
        weight[-1] = 1.0
    weight = weight[:, None]

    def bw(g):
        return (np.fft.rfft2(g, axes=AXES) * weight / (H * W),)

    return T.custom_op(out, (z,), bw)


def mirror_index(H: int, W: int) -> np.ndarray:
    """Flat index of bin ``(-u mod H, -v mod W)`` for every flat bin ``(u, v)``."""
    u = (-np.arange(H)) % H
    v = (-np.arange(W)) % W
    return (u[:, None] * W + v[None, :]).reshape(-1)


def hermitian_defect(values: np.ndarray) -> float:
    """max |X[u,v] - conj(X[-u,-v])| over all bins."""
    H, W = values.shape[-3], values.shape[-2]
    mirrored = np.roll(np.flip(values, axis=(-3, -2)), shift=(1, 1), axis=(-3, -2))
    return float(np.max(np.abs(values - np.conj(mirrored)), initial=0.0))


@dataclass
class Spectrum:
    values: Tensor
    layout: str
    source_shape: tuple

    def __post_init__(self):
        if self.layout not in ("full", "hermitian_half"):
            raise ContractError(f"unknown spectrum layout {self.layout!r}")

    @property
    def shape(self):
        return self.values.shape

    def to_full(self) -> np.ndarray:
        """Expand to the full layout as a plain array (no gradient)."""
        if self.layout == "full":
            return self.values.data
        H, W = self.source_shape[-3], self.source_shape[-2]
        half = self.values.data
        full = np.empty(half.shape[:-2] + (W,) + half.shape[-1:], dtype=half.dtype)
        wh = half.shape[-2]
        full[..., :wh, :] = half
        for v in range(wh, W):
            full[..., :, v, :] = np.conj(half[..., (-np.arange(H)) % H, W - v, :])
        return full


def dft2(x, layout: str = "full") -> Spectrum:
    """Per-channel 2-D DFT of a real ``[..., H, W, C]`` tensor."""
    x = T.as_tensor(x)
    if x.is_complex:
        raise ContractError("dft2 needs a real input; use fft2 for complex data")
    if x.ndim < 3 or x.shape[-3] < 1 or x.shape[-2] < 1:
        raise ShapeError(f"dft2 expects [..., H, W, C] with H, W >= 1, got {x.shape}")
    values = fft2(x) if layout == "full" else rfft2(x)
    return Spectrum(values=values, layout=layout, source_shape=tuple(x.shape))


def idft2(s: Spectrum, check: bool = True) -> Tensor:
    """Inverse DFT back to a real tensor.

    For the full layout the spectrum must be conjugate-symmetric (it claims a
    real origin); a defect above ``1e-6`` relative to its scale raises
    :class:`SymmetryError`, as does an imaginary residue in the result.
    """
    H, W = s.source_shape[-3], s.source_shape[-2]
    if s.layout == "hermitian_half":
        if s.values.shape[-3] != H or s.values.shape[-2] != W // 2 + 1:
            raise ShapeError(f"half spectrum {s.values.shape} inconsistent with source {s.source_shape}")
        return irfft2(s.values, W)
    if s.values.shape[-3:-1] != (H, W):
        raise ShapeError(f"spectrum {s.values.shape} inconsistent with source {s.source_shape}")
    z = ifft2(s.values)
    if check:
        tol = _tolerance(s.values.dtype)
        scale = max(1.0, float(np.max(np.abs(s.values.data), initial=0.0)))
        defect = hermitian_defect(s.values.data)
        if defect > tol * scale:
            raise SymmetryError(f"spectrum is not conjugate-symmetric (defect {defect:.3g})")
        resid = float(np.max(np.abs(z.data.imag), initial=0.0))
        rscale = max(1.0, float(np.max(np.abs(z.data.real), initial=0.0)))
        if resid > tol * rscale:
            raise SymmetryError(f"inverse transform left imaginary residue {resid:.3g}")
    return T.real(z)


def _tolerance(dtype) -> float:
    return 1e-6 if np.dtype(dtype) == np.complex128 else 1e-4


def export_spectrum_csv(spectrum: Spectrum | np.ndarray, path) -> None:
    """Write ``(u, v, channel, magnitude, phase)`` rows for one image spectrum."""
    values = spectrum.to_full() if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    if values.ndim != 3:
        raise ShapeError(f"export expects a single [H, W, C] spectrum, got {values.shape}")
    H, W, C = values.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "channel", "magnitude", "phase"])
        for u in range(H):
            for v in range(W):
                for c in range(C):
                    z = values[u, v, c]
                    writer.writerow([u, v, c, repr(float(abs(z))), repr(float(np.angle(z)))])


def log_magnitude(spectrum: Spectrum | np.ndarray) -> np.ndarray:
    values = spectrum.to_full() if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    return np.log1p(np.abs(values))


def export_log_magnitude(spectrum: Spectrum | np.ndarray, path, name: str = "log_magnitude") -> None:
    """Save ``log(1 + |X|)`` on the full grid as an SSTF tensor."""
    from .io import write_tensor

    write_tensor(path, log_magnitude(spectrum).astype(np.float64), name=name)
