"""Spatial-spectral block: spectral filter branch and selective-scan branch.

Parallel mode::

    X1, X2 = split(Conv1x1(X_in))
    Y1 = SpectralAttention(X1)
    X2' = CycleScan(DWConv(Linear(LN(X2))))
    Y2' = Linear(X2' * Linear(X2))
    Y2 = MLP(LN(Y2' + alpha2 * X2))
    X_out = Conv1x1(concat(Y1, Y2)) + X_in

where ``Linear`` is a 1x1 convolution followed by SiLU. The other modes are
ablation variants sharing the same parts.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import Conv2d, DepthwiseConv2d, LayerNorm, Linear, Mlp, Module
from .scan import CycleScan
from .spectral_filter import SpectralAttention

BLOCK_MODES = ("parallel", "serial", "baseline", "swsa", "mcss")


@dataclass
class SSBlockConfig:
    channels: int
    height: int
    width: int
    expansion: int = 2
    mode: str = "parallel"
    scan_mode: str = "cycle"
    state_dim: int = 4
    dt_rank: int | None = None
    alpha1_init: float = 1.0
    alpha2_init: float = 1.0
    mlp_ratio: float = 2
    filter_eps: float = 0.02

    def validate(self) -> "SSBlockConfig":
        if self.mode not in BLOCK_MODES:
            raise ConfigError(f"unknown block mode {self.mode!r}", "mode")
        if self.mode == "parallel" and self.channels % 2:
            raise ConfigError(f"parallel block needs even channels, got {self.channels}", "channels")
        if self.expansion < 1:
            raise ConfigError("expansion must be >= 1", "expansion")
        if self.scan_mode not in ("cycle", "ss2d"):
            raise ConfigError(f"unknown scan mode {self.scan_mode!r}", "scan_mode")
        if self.state_dim < 1:
            raise ConfigError("state_dim must be >= 1", "state_dim")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


class ScanBranch(Module):
    """The gated selective-scan branch operating on ``channels`` features."""

    def __init__(self, cfg: SSBlockConfig, channels: int, rng, dtype):
        wide = cfg.expansion * channels
        self.ln = LayerNorm(channels, dtype=dtype)
        self.lin_in = Linear(channels, wide, activation="silu", rng=rng, dtype=dtype)
        self.dwconv = DepthwiseConv2d(wide, 3, rng=rng, dtype=dtype)
        self.scan = CycleScan(wide, cfg.height, cfg.width, cfg.state_dim, cfg.scan_mode,
                              dt_rank=cfg.dt_rank, rng=rng, dtype=dtype)
        self.lin_gate = Linear(channels, wide, activation="silu", rng=rng, dtype=dtype)
        self.lin_out = Linear(wide, channels, activation="silu", rng=rng, dtype=dtype)
        self.alpha2 = T.parameter(cfg.alpha2_init, no_decay=True, dtype=dtype)
        self.ln_out = LayerNorm(channels, dtype=dtype)
        self.mlp = Mlp(channels, cfg.mlp_ratio, rng=rng, dtype=dtype)

    def forward(self, x2):
        a = self.scan(self.dwconv(self.lin_in(self.ln(x2))))
        y2p = self.lin_out(a * self.lin_gate(x2))
        return self.mlp(self.ln_out(y2p + self.alpha2 * x2))


class SSBlock(Module):
    def __init__(self, cfg: SSBlockConfig, rng=None, dtype=np.float64):
        cfg.validate()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        C = cfg.channels
        if cfg.mode == "baseline":
            # plain conv residual block standing in for a windowed-attention block
            self.conv1 = Conv2d(C, C, 3, rng=rng, dtype=dtype)
            self.conv2 = Conv2d(C, C, 3, rng=rng, dtype=dtype)
            return
        self.conv_in = Conv2d(C, C, 1, rng=rng, dtype=dtype)
        half = C // 2 if cfg.mode == "parallel" else C
        if cfg.mode in ("parallel", "serial", "swsa"):
            self.swsa = SpectralAttention(cfg.height, cfg.width, half, cfg.mlp_ratio, cfg.filter_eps,
                                          cfg.alpha1_init, rng=rng, dtype=dtype)
        if cfg.mode in ("parallel", "serial", "mcss"):
            self.mcss = ScanBranch(cfg, half, rng, dtype)
        self.fuse = Conv2d(C, C, 1, rng=rng, dtype=dtype)

    def forward(self, x):
        x = T.as_tensor(x)
        cfg = self.cfg
        if x.shape[-3:] != (cfg.height, cfg.width, cfg.channels):
            raise ShapeError(f"block built for {(cfg.height, cfg.width, cfg.channels)}, got {x.shape[-3:]}")
        if cfg.mode == "baseline":
            return x + self.conv2(T.relu(self.conv1(x)))
        t = self.conv_in(x)
        if cfg.mode == "parallel":
            x1, x2 = T.split(t, 2, axis=-1)
            y = T.concat([self.swsa(x1), self.mcss(x2)], axis=-1)
        elif cfg.mode == "serial":
            y = self.mcss(self.swsa(t))
        elif cfg.mode == "swsa":
            y = self.swsa(t)
        else:
            y = self.mcss(t)
        return self.fuse(y) + x
