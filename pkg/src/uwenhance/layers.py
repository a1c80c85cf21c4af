"""Convolutions, normalisation, pooling, resampling and the module container.

All feature maps are channels-last ``[B, H, W, C]`` (a leading batch axis is
optional for the functional ops). Convolution weights use the
``[out_ch, in_ch, k, k]`` layout and the cross-correlation convention.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


def _batched(x: Tensor):
    """Lift ``[H, W, C]`` to ``[1, H, W, C]``; returns (tensor, squeeze_flag)."""
    if x.ndim == 3:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected [B, H, W, C] or [H, W, C], got {x.shape}")
    return x, False


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return T.reshape(y, y.shape[1:]) if squeeze else y


def conv_output_size(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


# ---------------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------------

def pointwise(x, weight, bias=None) -> Tensor:
    """1x1 convolution as a matmul over the channel axis."""
    x = T.as_tensor(x)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[-1]} channels, layer expects {weight.shape[1]}")
    w2 = T.transpose(T.reshape(weight, weight.shape[:2]))
    y = T.matmul(x, w2)
    return y if bias is None else y + bias


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    x = T.as_tensor(x)
    cout, cin, k, k2 = weight.shape
    if k != k2:
        raise ShapeError("only square kernels are supported")
    if x.shape[-1] != cin:
        raise ShapeError(f"input has {x.shape[-1]} channels, layer expects {cin}")
    if k == 1 and stride == 1 and padding == 0:
        return pointwise(x, weight, bias)
    xb, squeeze = _batched(x)
    B, H, W, _ = xb.shape
    Ho = conv_output_size(H, k, stride, padding)
    Wo = conv_output_size(W, k, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"kernel {k} too large for input {H}x{W}")
    xp = np.pad(xb.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, k * k * cin)  # copies; (ki, kj, cin) order
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(cout, k * k * cin)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, cout)
    if bias is not None:
        out = out + bias.data
    padded_shape = xp.shape

    def bw(g):
        g2 = g.reshape(B * Ho * Wo, cout)
        gw = (g2.T @ cols).reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
        gcols = (g2 @ wmat).reshape(B, Ho, Wo, k, k, cin)
        gxp = np.zeros(padded_shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += gcols[:, :, :, i, j]
        gx = gxp[:, padding:padding + H, padding:padding + W, :]
        gb = g.sum(axis=(0, 1, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    y = T.custom_op(out, parents, lambda g: bw(g)[: len(parents)])
    return _unbatch(y, squeeze)


def depthwise_conv2d(x, weight, bias=None, padding: int = 1) -> Tensor:
    """Per-channel k x k convolution, stride 1; weight ``[C, 1, k, k]``."""
    x = T.as_tensor(x)
    C, one, k, _ = weight.shape
    if one != 1 or x.shape[-1] != C:
        raise ShapeError(f"depthwise weight {weight.shape} does not match input {x.shape}")
    xb, squeeze = _batched(x)
    B, H, W, _ = xb.shape
    Ho = conv_output_size(H, k, 1, padding)
    Wo = conv_output_size(W, k, 1, padding)
    xp = np.pad(xb.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    wd = weight.data[:, 0]
    out = np.zeros((B, Ho, Wo, C), dtype=np.result_type(xp.dtype, wd.dtype))
    for i in range(k):
        for j in range(k):
            out += xp[:, i:i + Ho, j:j + Wo, :] * wd[:, i, j]
    if bias is not None:
        out += bias.data

    def bw(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        gw = np.zeros_like(wd)
        for i in range(k):
            for j in range(k):
                gxp[:, i:i + Ho, j:j + Wo, :] += g * wd[:, i, j]
                gw[:, i, j] = np.einsum("bhwc,bhwc->c", g, xp[:, i:i + Ho, j:j + Wo, :])
        gx = gxp[:, padding:padding + H, padding:padding + W, :]
        gb = g.sum(axis=(0, 1, 2)) if bias is not None else None
        return gx, gw[:, None], gb

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    y = T.custom_op(out, parents, lambda g: bw(g)[: len(parents)])
    return _unbatch(y, squeeze)


def maxpool2(x) -> Tensor:
    x = T.as_tensor(x)
    xb, squeeze = _batched(x)
    B, H, W, C = xb.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2 needs even extents, got {H}x{W}")
    blocks = xb.data.reshape(B, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, H // 2, W // 2, C, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(B, H // 2, W // 2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, H, W, C)
        return (gb,)

    return _unbatch(T.custom_op(out, (xb,), bw), squeeze)


def avgpool2(x) -> Tensor:
    x = T.as_tensor(x)
    xb, squeeze = _batched(x)
    B, H, W, C = xb.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avgpool2 needs even extents, got {H}x{W}")
    out = xb.data.reshape(B, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25,)

    return _unbatch(T.custom_op(out, (xb,), bw), squeeze)


def upsample2(x, mode: str = "nearest") -> Tensor:
    x = T.as_tensor(x)
    if mode == "bilinear":
        return _upsample2_bilinear(x)
    if mode != "nearest":
        raise ShapeError(f"unknown upsampling mode {mode!r}")
    xb, squeeze = _batched(x)
    B, H, W, C = xb.shape
    out = np.repeat(np.repeat(xb.data, 2, axis=1), 2, axis=2)

    def bw(g):
        return (g.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4)),)

    return _unbatch(T.custom_op(out, (xb,), bw), squeeze)


def _bilinear_matrix(n: int, dtype) -> np.ndarray:
    """[2n, n] interpolation matrix, half-pixel centres, edge clamped."""
    m = np.zeros((2 * n, n), dtype=dtype)
    for i in range(2 * n):
        src = (i + 0.5) / 2 - 0.5
        lo = int(np.floor(src))
        frac = src - lo
        m[i, min(max(lo, 0), n - 1)] += 1 - frac
        m[i, min(max(lo + 1, 0), n - 1)] += frac
    return m


def _upsample2_bilinear(x: Tensor) -> Tensor:
    xb, squeeze = _batched(x)
    B, H, W, C = xb.shape
    mh = T.Tensor(_bilinear_matrix(H, xb.dtype))
    mw = T.Tensor(_bilinear_matrix(W, xb.dtype))
    # rows: [B, W, C, H] @ [H, 2H]^T ; cols likewise
    t = T.transpose(xb, (0, 2, 3, 1))
    t = T.matmul(t, T.transpose(mh))
    t = T.transpose(t, (0, 3, 2, 1))  # [B, 2H, C, W]
    t = T.matmul(t, T.transpose(mw))
    y = T.transpose(t, (0, 1, 3, 2))
    return _unbatch(y, squeeze)


def layer_norm(x, scale=None, shift=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the channel (last) axis at every position."""
    x = T.as_tensor(x)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if scale is not None:
        out = xhat * scale.data + shift.data

    def bw(g):
        gxhat = g * scale.data if scale is not None else g
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        if scale is None:
            return (gx,)
        axes = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    parents = (x,) if scale is None else (x, scale, shift)
    return T.custom_op(out.astype(xd.dtype, copy=False), parents, bw)


def batch_norm(x, scale, shift, running_mean, running_var, training: bool,
               momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over all non-channel axes.

    ``running_mean``/``running_var`` are numpy arrays updated in place in
    training mode: ``r <- momentum * r + (1 - momentum) * batch``.
    """
    x = T.as_tensor(x)
    xd = x.data
    axes = tuple(range(xd.ndim - 1))
    if training:
        mu = xd.mean(axis=axes)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes)
        n = xd.size // xd.shape[-1]
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
        xc = xd - mu
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = (xhat * scale.data + shift.data).astype(xd.dtype, copy=False)

    def bw(g):
        gxhat = g * scale.data
        if training:
            gx = inv * (gxhat - gxhat.mean(axis=axes) - xhat * (gxhat * xhat).mean(axis=axes))
        else:
            gx = gxhat * inv
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return T.custom_op(out, (x, scale, shift), bw)


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------

class Module:
    """Attribute-walking parameter container with dotted names."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.named_children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self.named_children():
            yield from child.named_buffers(prefix + name + ".")

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, p.data) for n, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state, strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = [k for k in list(params) + list(buffers) if k not in state]
        if strict and missing:
            raise KeyError(f"missing entries in state: {missing[:5]}")
        for k, p in params.items():
            if k in state:
                arr = np.asarray(state[k])
                if arr.shape != p.shape:
                    raise ShapeError(f"{k}: stored shape {arr.shape} != {p.shape}")
                p.data = arr.astype(p.dtype, copy=True)
        for k, buf in buffers.items():
            if k in state:
                buf[...] = state[k]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.named_children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def named_children(self):
        for i, layer in enumerate(self.layers):
            yield str(i), layer

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel=3, stride=1, padding=None, bias=True, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.padding = kernel // 2 if padding is None else padding
        bound = 1.0 / np.sqrt(in_ch * kernel * kernel)
        self.weight = T.parameter(_uniform(rng, (out_ch, in_ch, kernel, kernel), bound, dtype), dtype=dtype)
        self.bias = T.parameter(_uniform(rng, (out_ch,), bound, dtype), dtype=dtype) if bias else None

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, channels, kernel=3, bias=True, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.kernel = channels, kernel
        bound = 1.0 / kernel
        self.weight = T.parameter(_uniform(rng, (channels, 1, kernel, kernel), bound, dtype), dtype=dtype)
        self.bias = T.parameter(_uniform(rng, (channels,), bound, dtype), dtype=dtype) if bias else None

    def forward(self, x):
        return depthwise_conv2d(x, self.weight, self.bias, padding=self.kernel // 2)


class Linear(Module):
    """Pointwise (1x1) projection, optionally followed by SiLU."""

    def __init__(self, in_ch, out_ch, activation: str | None = None, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_ch)
        self.activation = activation
        self.weight = T.parameter(_uniform(rng, (out_ch, in_ch, 1, 1), bound, dtype), dtype=dtype)
        self.bias = T.parameter(_uniform(rng, (out_ch,), bound, dtype), dtype=dtype)

    def forward(self, x):
        y = pointwise(x, self.weight, self.bias)
        if self.activation == "silu":
            return T.silu(y)
        if self.activation == "gelu":
            return T.gelu(y)
        return y


class LayerNorm(Module):
    def __init__(self, channels, eps=1e-5, dtype=np.float64):
        self.eps = eps
        self.scale = T.parameter(np.ones(channels), dtype=dtype)
        self.shift = T.parameter(np.zeros(channels), dtype=dtype)

    def forward(self, x):
        return layer_norm(x, self.scale, self.shift, self.eps)


class BatchNorm(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float64):
        self.momentum, self.eps = momentum, eps
        self.scale = T.parameter(np.ones(channels), dtype=dtype)
        self.shift = T.parameter(np.zeros(channels), dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x):
        return batch_norm(x, self.scale, self.shift, self.running_mean, self.running_var,
                          self.training, self.momentum, self.eps)


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)


class MaxPool2(Module):
    def forward(self, x):
        return maxpool2(x)


class Upsample2(Module):
    def __init__(self, mode="nearest"):
        self.mode = mode

    def forward(self, x):
        return upsample2(x, self.mode)


class Mlp(Module):
    """Two pointwise stages with GELU between; channel count preserved."""

    def __init__(self, channels, expand_ratio=2, rng=None, dtype=np.float64):
        hidden = int(round(expand_ratio * channels))
        self.fc1 = Linear(channels, hidden, activation="gelu", rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng=rng, dtype=dtype)

    def forward(self, x):
        return self.fc2(self.fc1(x))


def conv_block(in_ch, out_ch, rng, dtype) -> Sequential:
    """BN + ReLU + Conv(in, out, 3, 1, 1)."""
    return Sequential(BatchNorm(in_ch, dtype=dtype), ReLU(), Conv2d(in_ch, out_ch, 3, 1, 1, rng=rng, dtype=dtype))
