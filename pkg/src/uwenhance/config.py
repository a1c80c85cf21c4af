"""JSON run configuration: network + training + loss + degradation + ablation switches.

Unknown keys anywhere are rejected with a :class:`ConfigError` carrying the
dotted key path. Relative paths are resolved against the config file's
directory.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields

from .data import DegradationParams
from .errors import ConfigError
from .losses import LossConfig
from .network import NetworkConfig, preset
from .training import TrainConfig, train_preset


@dataclass
class DataConfig:
    n_train: int = 200
    n_val: int = 40
    seed: int = 0

    def validate(self, path="data"):
        if self.n_train < 1:
            raise ConfigError("n_train must be >= 1", f"{path}.n_train")
        if self.n_val < 0:
            raise ConfigError("n_val must be >= 0", f"{path}.n_val")
        return self


@dataclass
class Ablation:
    baseline_block: bool = False
    ss2d_mode: bool = False
    serial_mode: bool = False
    disable_fwl: bool = False


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=lambda: preset("desk"))
    train: TrainConfig = field(default_factory=lambda: train_preset("desk"))
    loss: LossConfig = field(default_factory=lambda: LossConfig(auto_balance=True))
    degradation: DegradationParams = field(default_factory=DegradationParams)
    data: DataConfig = field(default_factory=DataConfig)
    ablation: Ablation = field(default_factory=Ablation)
    data_dir: str | None = None
    out_dir: str | None = None

    def resolved(self) -> "RunConfig":
        """Copy with the ablation switches folded into network/loss settings."""
        cfg = copy.deepcopy(self)
        ab = cfg.ablation
        if ab.baseline_block and ab.serial_mode:
            raise ConfigError("baseline_block and serial_mode are exclusive", "ablation.serial_mode")
        if ab.baseline_block:
            cfg.network.block_mode = "baseline"
        if ab.serial_mode:
            cfg.network.block_mode = "serial"
        if ab.ss2d_mode:
            cfg.network.scan_mode = "ss2d"
        if ab.disable_fwl:
            cfg.loss.use_fwl = False
        return cfg

    def validate(self) -> "RunConfig":
        cfg = self.resolved()
        _prefixed(cfg.network.validate, "network")
        cfg.train.validate("train")
        _prefixed(cfg.loss.validate, "loss")
        cfg.degradation.validate("degradation")
        cfg.data.validate("data")
        if (cfg.network.height, cfg.network.width) == (0, 0):
            raise ConfigError("image extents must be positive", "network.height")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["degradation"] = self.degradation.to_dict()
        return out


def _prefixed(fn, prefix):
    try:
        return fn()
    except ConfigError as exc:
        key = f"{prefix}.{exc.key_path}" if exc.key_path else prefix
        raise ConfigError(exc.reason, key) from None


_SECTIONS = {
    "network": NetworkConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "degradation": DegradationParams,
    "data": DataConfig,
    "ablation": Ablation,
}
_TUPLE_KEYS = {"beta", "ambient", "depth_range"}


def _build(cls, data, path, base):
    if not isinstance(data, dict):
        raise ConfigError("expected an object", path)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", f"{path}.{key}")
    values = {f.name: getattr(base, f.name) for f in fields(cls)}
    for key, value in data.items():
        values[key] = tuple(value) if key in _TUPLE_KEYS else value
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc), path) from None


def run_config_from_dict(data: dict, base_dir: str | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", "")
    allowed = set(_SECTIONS) | {"preset", "data_dir", "out_dir"}
    for key in data:
        if key not in allowed:
            raise ConfigError("unknown key", key)
    name = data.get("preset", "desk")
    if name not in ("desk", "full"):
        raise ConfigError(f"unknown preset {name!r}", "preset")
    defaults = RunConfig(network=preset(name), train=train_preset(name),
                         loss=LossConfig(auto_balance=(name == "desk")))
    parts = {}
    for section, cls in _SECTIONS.items():
        parts[section] = _build(cls, data.get(section, {}), section, getattr(defaults, section))
    cfg = RunConfig(**parts)
    for key in ("data_dir", "out_dir"):
        value = data.get(key)
        if value is not None:
            if not isinstance(value, str):
                raise ConfigError("expected a path string", key)
            if base_dir is not None and not os.path.isabs(value):
                value = os.path.normpath(os.path.join(base_dir, value))
        setattr(cfg, key, value)
    return cfg.validate()


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "") from None
    return run_config_from_dict(data, os.path.dirname(os.path.abspath(path)))


# Named rows of the component ablation, desk scale.
ABLATIONS = {
    "BL": {"network": {"block_mode": "baseline"}, "ablation": {"disable_fwl": True}},
    "BL+SS2D": {"network": {"block_mode": "mcss", "scan_mode": "ss2d"}, "ablation": {"disable_fwl": True}},
    "BL+MCSS": {"network": {"block_mode": "mcss"}, "ablation": {"disable_fwl": True}},
    "BL+SWSA": {"network": {"block_mode": "swsa"}, "ablation": {"disable_fwl": True}},
    "serial": {"network": {"block_mode": "serial"}, "ablation": {"disable_fwl": True}},
    "parallel": {"network": {"block_mode": "parallel"}, "ablation": {"disable_fwl": True}},
    "parallel+FWL": {"network": {"block_mode": "parallel"}},
}


def ablation_config(name: str, seed: int = 0, **sections) -> RunConfig:
    """Desk RunConfig for one ablation row; ``sections`` merge into the JSON form."""
    try:
        doc = copy.deepcopy(ABLATIONS[name])
    except KeyError:
        raise ConfigError(f"unknown ablation {name!r}", "ablation") from None
    doc.setdefault("network", {})["seed"] = seed
    doc.setdefault("train", {})["seed"] = seed
    for section, values in sections.items():
        doc.setdefault(section, {}).update(values)
    return run_config_from_dict(doc)
