"""Adam, step-decay schedule, the training loop and SSTF checkpoints.

Shuffling and augmentation for epoch ``e`` draw from a generator seeded by
``(seed, e)``, so a run resumed from any epoch boundary replays the unbroken
run exactly.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .data import AugmentConfig, PairedDataset, augment_arrays
from .errors import ConfigError, NumericError
from .io import read_tensors, write_tensors
from .layers import Module
from .losses import LossConfig, balance_weight, lfd_map, psnr_map, ssim_map, total_loss

LOG_COLUMNS = ("epoch", "lr", "l1", "fwl", "total", "val_psnr", "val_ssim", "val_lfd")


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-5
    batch_size: int = 10
    epochs: int = 600
    decay_every: int = 200
    decay_factor: float = 0.4
    seed: int = 0
    augment: bool = True
    eval_batch: int = 8

    def validate(self, path: str = "train") -> "TrainConfig":
        if not 0 < self.beta1 < 1:
            raise ConfigError("beta1 must lie in (0, 1)", f"{path}.beta1")
        if not 0 < self.beta2 < 1:
            raise ConfigError("beta2 must lie in (0, 1)", f"{path}.beta2")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0", f"{path}.lr")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0", f"{path}.weight_decay")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", f"{path}.batch_size")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0", f"{path}.epochs")
        if self.decay_every < 1:
            raise ConfigError("decay_every must be >= 1", f"{path}.decay_every")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


TRAIN_PRESETS = {
    "full": dict(lr=2e-4, beta1=0.5, beta2=0.999, weight_decay=5e-5, batch_size=10, epochs=600, decay_every=200),
    "desk": dict(lr=1e-3, beta1=0.9, beta2=0.999, weight_decay=5e-5, batch_size=8, epochs=30, decay_every=10),
}


def train_preset(name: str, **overrides) -> TrainConfig:
    try:
        base = dict(TRAIN_PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown training preset {name!r}") from None
    base.update(overrides)
    return TrainConfig(**base)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr * cfg.decay_factor ** (epoch // cfg.decay_every)


class Adam:
    """Bias-corrected Adam with decoupled weight decay.

    Parameters flagged ``no_decay`` (gates, residual scales) skip the decay.
    """

    def __init__(self, named_params, cfg: TrainConfig):
        self.params = dict(named_params)
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, lr: float | None = None) -> None:
        cfg = self.cfg
        lr = cfg.lr if lr is None else lr
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter {name}")
        self.t += 1
        c1 = 1.0 - cfg.beta1 ** self.t
        c2 = 1.0 - cfg.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
            if cfg.weight_decay and not p.no_decay:
                update = update + cfg.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.dtype, copy=False)

    def state(self) -> dict:
        out = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load(self, tensors: dict, t: int) -> None:
        for name in self.params:
            self.m[name] = np.array(tensors[f"adam.m.{name}"], copy=True)
            self.v[name] = np.array(tensors[f"adam.v.{name}"], copy=True)
        self.t = int(t)


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    best_psnr: float = -math.inf
    best_epoch: int = -1
    fwl_weight: float | None = None     # resolved lambda (auto-balance fixes it on step 1)
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _encode_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).astype(np.float64)


def _decode_json(arr) -> dict:
    return json.loads(np.asarray(arr).astype(np.uint8).tobytes().decode("utf-8"))


def save_checkpoint(path, model: Module, state: TrainState | None = None, optimizer: Adam | None = None,
                    config: dict | None = None) -> None:
    tensors = {f"param.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        tensors.update(optimizer.state())
    if state is not None:
        tensors["state.counters"] = np.array([state.step, state.epoch, state.best_epoch,
                                              optimizer.t if optimizer else 0], dtype=np.float64)
        tensors["state.best_psnr"] = np.array(state.best_psnr, dtype=np.float64)
        lam = math.nan if state.fwl_weight is None else state.fwl_weight
        tensors["state.fwl_weight"] = np.array(lam, dtype=np.float64)
    if config is not None:
        tensors["meta.config_json"] = _encode_json(config)
    write_tensors(path, tensors)


@dataclass
class Checkpoint:
    params: dict
    state: TrainState | None
    optimizer_tensors: dict
    optimizer_t: int
    config: dict | None


def read_checkpoint(path) -> Checkpoint:
    tensors = read_tensors(path)
    params = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
    opt = {k: v for k, v in tensors.items() if k.startswith("adam.")}
    state, t = None, 0
    if "state.counters" in tensors:
        step, epoch, best_epoch, t = (int(c) for c in tensors["state.counters"])
        lam = float(tensors["state.fwl_weight"])
        state = TrainState(step=step, epoch=epoch, best_psnr=float(tensors["state.best_psnr"]),
                           best_epoch=best_epoch, fwl_weight=None if math.isnan(lam) else lam)
    config = _decode_json(tensors["meta.config_json"]) if "meta.config_json" in tensors else None
    return Checkpoint(params, state, opt, t, config)


def load_checkpoint(path, model: Module) -> Checkpoint:
    ckpt = read_checkpoint(path)
    model.load_state_dict(ckpt.params)
    return ckpt


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------

def evaluate(model, degraded: np.ndarray, clean: np.ndarray, batch_size: int = 8) -> dict:
    out = model.predict(degraded, batch_size=batch_size)
    p, s, q = psnr_map(clean, out), ssim_map(clean, out), lfd_map(clean, out)
    return {"psnr": float(np.mean(p)), "ssim": float(np.mean(s)), "lfd": float(np.mean(q)), "output": out}


def _check_finite(value: float, parts: dict, state: TrainState, out_dir):
    if math.isfinite(value):
        return
    dump = {"step": state.step, "epoch": state.epoch, "parts": parts}
    if out_dir is not None:
        with open(os.path.join(out_dir, "numeric_failure.json"), "w") as fh:
            json.dump(dump, fh, indent=2, default=str)
    raise NumericError(f"non-finite loss at epoch {state.epoch} step {state.step}: {parts}")


@dataclass
class TrainResult:
    model: Module
    state: TrainState
    optimizer: Adam
    history: list


def train(model, data: PairedDataset, cfg: TrainConfig, loss_cfg: LossConfig | None = None, out_dir=None,
          resume=None, config_echo: dict | None = None, stop_epoch: int | None = None, verbose=False) -> TrainResult:
    """Train ``model`` on ``data`` for ``cfg.epochs`` epochs.

    ``resume`` is a checkpoint path written by an earlier call. ``stop_epoch``
    ends the run early (after that many completed epochs) without changing
    the schedule, which is how interrupted runs are simulated.
    """
    cfg.validate()
    loss_cfg = (loss_cfg or LossConfig()).validate()
    if len(set(data.train_idx.tolist()) & set(data.val_idx.tolist())):
        raise ConfigError("train and val splits overlap", "data")
    model.train()
    opt = Adam(model.named_parameters(), cfg)
    state = TrainState()
    if resume is not None:
        ckpt = load_checkpoint(resume, model)
        state = ckpt.state or TrainState()
        opt.load(ckpt.optimizer_tensors, ckpt.optimizer_t)
        if out_dir is not None and os.path.exists(os.path.join(out_dir, "log.csv")):
            state.history = _read_log(os.path.join(out_dir, "log.csv"))[:state.epoch]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "meta.json"), "w") as fh:
            json.dump({"train": cfg.to_dict(), "loss": loss_cfg.to_dict(), "config": config_echo,
                       "data": {k: v for k, v in data.meta.items() if k != "sample_seeds"}},
                      fh, indent=2, sort_keys=True, default=str)
        if resume is None:
            save_checkpoint(os.path.join(out_dir, "ckpt_best.sstf"), model, state, opt, config_echo)

    x_train, y_train = data.split("train")
    x_val, y_val = data.split("val")
    aug = AugmentConfig() if cfg.augment else AugmentConfig(p_rotate=0, p_hflip=0, p_vflip=0)
    last = cfg.epochs if stop_epoch is None else min(cfg.epochs, stop_epoch)
    while state.epoch < last:
        epoch = state.epoch
        t0 = time.time()
        lr = lr_at(epoch, cfg)
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(x_train))
        sums = {"l1": 0.0, "fwl": 0.0, "total": 0.0}
        batches = 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb, yb = [], []
            for i in idx:
                xa, ya = augment_arrays([x_train[i], y_train[i]], rng, aug)
                xb.append(xa)
                yb.append(ya)
            xb = np.stack(xb).astype(model.dtype)
            yb = np.stack(yb).astype(model.dtype)
            pred = model(xb)
            lam = state.fwl_weight
            if lam is None and loss_cfg.use_fwl:
                if loss_cfg.auto_balance:
                    _, probe = total_loss(yb, pred.data, loss_cfg)
                    lam = balance_weight(probe["l1"], probe["fwl"])
                else:
                    lam = loss_cfg.fwl_weight
                state.fwl_weight = lam
            loss, parts = total_loss(yb, pred, loss_cfg, fwl_weight=lam if loss_cfg.use_fwl else 0.0)
            _check_finite(parts["total"], parts, state, out_dir)
            model.zero_grad()
            loss.backward()
            try:
                opt.step(lr)
            except NumericError:
                if out_dir is not None:
                    _check_finite(math.nan, parts, state, out_dir)
                raise
            state.step += 1
            batches += 1
            for k in sums:
                sums[k] += parts[k]
        metrics = evaluate(model, x_val, y_val, cfg.eval_batch)
        model.train()
        state.epoch += 1
        row = {"epoch": state.epoch, "lr": lr, **{k: v / max(batches, 1) for k, v in sums.items()},
               "val_psnr": metrics["psnr"], "val_ssim": metrics["ssim"], "val_lfd": metrics["lfd"]}
        state.history.append(row)
        improved = metrics["psnr"] > state.best_psnr
        if improved:
            state.best_psnr, state.best_epoch = metrics["psnr"], state.epoch
        if out_dir is not None:
            _write_log(os.path.join(out_dir, "log.csv"), state.history)
            if improved:
                save_checkpoint(os.path.join(out_dir, "ckpt_best.sstf"), model, state, opt, config_echo)
            save_checkpoint(os.path.join(out_dir, "ckpt_last.sstf"), model, state, opt, config_echo)
        if verbose:
            print(f"epoch {state.epoch:3d} lr {lr:.2e} loss {row['total']:.5f} "
                  f"val psnr {row['val_psnr']:.3f} ssim {row['val_ssim']:.4f} lfd {row['val_lfd']:.4f} "
                  f"({time.time() - t0:.1f}s)", flush=True)
    return TrainResult(model, state, opt, state.history)


def _write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in LOG_COLUMNS})


def _read_log(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def config_fields(cls) -> set:
    return {f.name for f in fields(cls)}
