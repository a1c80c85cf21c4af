"""The full enhancement network and its presets.

Shallow features ``F0`` come from a BN-ReLU-Conv stack with ``downsamples``
max-pooling stages. ``num_dcssb`` densely connected groups of blocks produce
``F1..Fn`` which a learned weighted sum fuses into ``F_DF``; the
reconstruction stack maps ``F0 + F_DF`` back to an RGB image in ``(0, 1)``.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .block import SSBlock, SSBlockConfig
from .errors import ConfigError, ShapeError
from .layers import Conv2d, MaxPool2, Module, Sequential, Upsample2, conv_block


@dataclass
class NetworkConfig:
    height: int = 64
    width: int = 64
    in_channels: int = 3
    base_channels: int = 8
    downsamples: int = 2
    num_dcssb: int = 2
    blocks_per_dcssb: int = 2
    expansion: int = 2
    state_dim: int = 4
    dt_rank: int | None = None
    block_mode: str = "parallel"
    scan_mode: str = "cycle"
    mlp_ratio: float = 2
    dense_within: bool = True
    upsample: str = "nearest"
    dtype: str = "real32"
    seed: int = 0

    @property
    def deep_shape(self) -> tuple:
        s = 2 ** self.downsamples
        return (self.height // s, self.width // s, self.base_channels * s)

    def block_config(self) -> SSBlockConfig:
        h, w, c = self.deep_shape
        return SSBlockConfig(channels=c, height=h, width=w, expansion=self.expansion, mode=self.block_mode,
                             scan_mode=self.scan_mode, state_dim=self.state_dim, dt_rank=self.dt_rank,
                             mlp_ratio=self.mlp_ratio)

    def validate(self) -> "NetworkConfig":
        s = 2 ** self.downsamples
        if self.height % s or self.width % s:
            raise ConfigError(f"extents {self.height}x{self.width} not divisible by 2^{self.downsamples}", "height")
        if self.num_dcssb < 1:
            raise ConfigError("num_dcssb must be >= 1", "num_dcssb")
        if self.blocks_per_dcssb < 1:
            raise ConfigError("blocks_per_dcssb must be >= 1", "blocks_per_dcssb")
        if self.upsample not in ("nearest", "bilinear"):
            raise ConfigError(f"unknown upsampling {self.upsample!r}", "upsample")
        if self.dtype not in ("real32", "real64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}", "dtype")
        try:
            self.block_config().validate()
        except ConfigError as exc:
            raise ConfigError(exc.reason, _BLOCK_KEYS.get(exc.key_path, exc.key_path)) from None
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# block-level key -> network-level key, for error paths
_BLOCK_KEYS = {"mode": "block_mode", "channels": "base_channels"}


PRESETS = {
    # 256x256 input; Conv(3,16) -> Conv(16,32) -> pool -> Conv(32,64) -> pool
    "full": dict(height=256, width=256, base_channels=16, downsamples=2, num_dcssb=6, blocks_per_dcssb=4,
                 state_dim=16),
    "desk": dict(height=64, width=64, base_channels=8, downsamples=2, num_dcssb=2, blocks_per_dcssb=2,
                 state_dim=4),
}


def preset(name: str, **overrides) -> NetworkConfig:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}") from None
    base.update(overrides)
    return NetworkConfig(**base)


class ShallowExtractor(Module):
    def __init__(self, cfg: NetworkConfig, rng, dtype):
        c = cfg.base_channels
        layers = [conv_block(cfg.in_channels, c, rng, dtype)]
        for _ in range(cfg.downsamples):
            layers += [conv_block(c, 2 * c, rng, dtype), MaxPool2()]
            c *= 2
        self.layers = Sequential(*layers)

    def forward(self, x):
        return self.layers(x)


class DenseGroup(Module):
    """One densely connected group: reduce(concat(inputs)) -> blocks -> 3x3 conv."""

    def __init__(self, n_inputs: int, cfg: NetworkConfig, rng, dtype):
        C = cfg.deep_shape[2]
        self.n_inputs = n_inputs
        self.dense_within = cfg.dense_within
        self.reduce = Conv2d(n_inputs * C, C, 1, rng=rng, dtype=dtype)
        self.n_blocks = cfg.blocks_per_dcssb
        for k in range(1, self.n_blocks + 1):
            if self.dense_within and k > 1:
                setattr(self, f"dense{k}", Conv2d(k * C, C, 1, rng=rng, dtype=dtype))
            setattr(self, f"block{k}", SSBlock(cfg.block_config(), rng=rng, dtype=dtype))
        self.conv = Conv2d(C, C, 3, rng=rng, dtype=dtype)

    def forward(self, features):
        if len(features) != self.n_inputs:
            raise ShapeError(f"group expects {self.n_inputs} inputs, got {len(features)}")
        shape = features[0].shape
        if any(f.shape != shape for f in features):
            raise ShapeError("dense inputs must share one shape")
        x = features[0] if len(features) == 1 else T.concat(features, axis=-1)
        h = self.reduce(x)
        outs = [h]
        for k in range(1, self.n_blocks + 1):
            if self.dense_within and k > 1:
                h = getattr(self, f"dense{k}")(T.concat(outs, axis=-1))
            h = getattr(self, f"block{k}")(h)
            outs.append(h)
        return self.conv(h)


class GatedFusion(Module):
    def __init__(self, n: int, dtype):
        self.w = T.parameter(np.full(n, 1.0 / n), no_decay=True, dtype=dtype)

    def forward(self, features):
        return gated_fuse(features, self.w)


def gated_fuse(features, w) -> T.Tensor:
    """sum_i w[i] * F_i over equal-shaped features."""
    stacked = T.stack(features, axis=0)
    wb = T.reshape(w, (len(features),) + (1,) * (stacked.ndim - 1))
    return (stacked * wb).sum(axis=0)


class Reconstructor(Module):
    def __init__(self, cfg: NetworkConfig, rng, dtype):
        c = cfg.deep_shape[2]
        layers = []
        for _ in range(cfg.downsamples):
            layers += [Upsample2(cfg.upsample), conv_block(c, c // 2, rng, dtype)]
            c //= 2
        layers.append(conv_block(c, cfg.in_channels, rng, dtype))
        self.layers = Sequential(*layers)

    def forward(self, x):
        return T.sigmoid(self.layers(x))


class EnhancementNet(Module):
    def __init__(self, cfg: NetworkConfig):
        cfg.validate()
        self.cfg = cfg
        dtype = T.DTYPES[cfg.dtype]
        rng = np.random.default_rng(cfg.seed)
        self.extract = ShallowExtractor(cfg, rng, dtype)
        for j in range(1, cfg.num_dcssb + 1):
            setattr(self, f"dcssb{j}", DenseGroup(j, cfg, rng, dtype))
        self.fusion = GatedFusion(cfg.num_dcssb, dtype)
        self.rec = Reconstructor(cfg, rng, dtype)
        self.dtype = dtype

    def groups(self):
        return [getattr(self, f"dcssb{j}") for j in range(1, self.cfg.num_dcssb + 1)]

    def shallow(self, x):
        x = T.cast(T.as_tensor(x), self.dtype)
        H, W = x.shape[-3], x.shape[-2]
        s = 2 ** self.cfg.downsamples
        if H % s or W % s:
            raise ConfigError(f"input {H}x{W} not divisible by 2^{self.cfg.downsamples}")
        if (H, W) != (self.cfg.height, self.cfg.width):
            raise ShapeError(f"network built for {self.cfg.height}x{self.cfg.width}, got {H}x{W}")
        return self.extract(x)

    def deep(self, f0):
        feats = [f0]
        for group in self.groups():
            feats.append(group(feats))
        return self.fusion(feats[1:])

    def forward(self, x):
        f0 = self.shallow(x)
        return self.rec(f0 + self.deep(f0))

    def predict(self, x, batch_size: int = 8) -> np.ndarray:
        """Inference on numpy images ``[N, H, W, 3]`` or ``[H, W, 3]``."""
        x = np.asarray(x)
        single = x.ndim == 3
        if single:
            x = x[None]
        was_training = self.training
        self.eval()
        outs = []
        with T.no_grad():
            for s in range(0, len(x), batch_size):
                outs.append(self.forward(x[s:s + batch_size]).data)
        self.train(was_training)
        out = np.concatenate(outs) if outs else np.zeros_like(x)
        return out[0] if single else out


def count_params(cfg) -> int:
    """Exact number of learnable scalars for a network or block config."""
    if isinstance(cfg, SSBlockConfig):
        return SSBlock(cfg).num_parameters()
    if isinstance(cfg, NetworkConfig):
        return EnhancementNet(cfg).num_parameters()
    if isinstance(cfg, Module):
        return cfg.num_parameters()
    raise TypeError(f"cannot count parameters of {type(cfg).__name__}")


def parameter_breakdown(model: Module, depth: int = 1) -> "OrderedDict[str, int]":
    """Parameter counts grouped by the first ``depth`` name components."""
    out: OrderedDict[str, int] = OrderedDict()
    for name, p in model.named_parameters():
        key = ".".join(name.split(".")[:depth])
        out[key] = out.get(key, 0) + p.size
    return out


def config_from_dict(data: dict, path: str = "network") -> NetworkConfig:
    known = {f.name for f in fields(NetworkConfig)}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", f"{path}.{key}")
    return NetworkConfig(**data)
