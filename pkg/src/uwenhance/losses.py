"""Training objectives and image-quality metrics.

The frequency-wise loss compares per-channel 2-D spectra. For every bin the
squared spectral distance ``d = |F_gt - F_pred|^2`` is weighted by a focusing
factor ``theta = sqrt(d)`` (optionally divided by its per-channel maximum),
held constant during differentiation::

    fwl = sum_k (1 / HW) * sum_{u,v} theta_k(u, v) * d_k(u, v)

Metrics (``psnr``, ``ssim``, ``lfd``) operate on plain numpy arrays.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .errors import ConfigError, ShapeError
from .spectral import fft2
from .tensor import Tensor

THETA_MODES = ("sqrt_raw", "sqrt_normalized")


@dataclass
class FrequencyDistanceMap:
    d: Tensor              # [..., H, W, C] squared spectral distance, differentiable
    theta: np.ndarray      # [..., H, W, C] focusing weights, detached


@dataclass
class LossConfig:
    fwl_weight: float = 0.1
    theta_mode: str = "sqrt_normalized"
    l1_weight: float = 1.0
    auto_balance: bool = False
    use_fwl: bool = True

    def validate(self) -> "LossConfig":
        if self.theta_mode not in THETA_MODES:
            raise ConfigError(f"unknown theta mode {self.theta_mode!r}", "theta_mode")
        if not self.fwl_weight > 0:
            raise ConfigError("fwl_weight must be > 0 (use use_fwl=false to drop the term)", "fwl_weight")
        if self.l1_weight < 0:
            raise ConfigError("l1_weight must be >= 0", "l1_weight")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _check_pair(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if len(a.shape) < 3:
        raise ShapeError(f"expected [..., H, W, C], got {a.shape}")


def focus_weights(d: np.ndarray, mode: str = "sqrt_normalized") -> np.ndarray:
    theta = np.sqrt(d)
    if mode == "sqrt_normalized":
        peak = theta.max(axis=(-3, -2), keepdims=True)
        theta = np.divide(theta, peak, out=np.zeros_like(theta), where=peak > 0)
    elif mode != "sqrt_raw":
        raise ConfigError(f"unknown theta mode {mode!r}", "theta_mode")
    return theta


def frequency_distance(gt, pred, theta_mode: str = "sqrt_normalized") -> FrequencyDistanceMap:
    gt, pred = T.as_tensor(gt), T.as_tensor(pred)
    _check_pair(gt, pred)
    if gt.is_complex or pred.is_complex:
        raise ShapeError("frequency distance expects real images")
    # the DFT is linear, so F_gt - F_pred is the spectrum of the difference
    d = T.abs2(fft2(gt - pred))
    return FrequencyDistanceMap(d, focus_weights(d.data, theta_mode))


def fwl(gt, pred, theta_mode: str = "sqrt_normalized", theta=None) -> Tensor:
    """Frequency-wise loss; batched inputs are averaged over the batch.

    ``theta`` overrides the focusing weights (e.g. to freeze them for a
    finite-difference check).
    """
    fd = frequency_distance(gt, pred, theta_mode)
    H, W = fd.d.shape[-3], fd.d.shape[-2]
    theta = fd.theta if theta is None else np.asarray(theta)
    weighted = fd.d * theta.astype(fd.d.dtype)
    per_image = weighted.sum(axis=(-3, -2, -1)) * (1.0 / (H * W))
    return per_image.mean() if per_image.ndim else per_image


def l1_loss(gt, pred) -> Tensor:
    gt, pred = T.as_tensor(gt), T.as_tensor(pred)
    _check_pair(gt, pred)
    return T.abs_(pred - gt).mean()


def balance_weight(l1_value: float, fwl_value: float) -> float:
    """lambda that puts the weighted FWL on the scale of the L1 term."""
    return float(l1_value) / (float(fwl_value) + 1e-8)


def total_loss(gt, pred, cfg: LossConfig, fwl_weight: float | None = None):
    """``(loss, parts)`` where ``parts`` holds detached floats per term."""
    l1 = l1_loss(gt, pred)
    parts = {"l1": float(l1.data)}
    loss = l1 * cfg.l1_weight
    lam = cfg.fwl_weight if fwl_weight is None else fwl_weight
    if cfg.use_fwl and lam != 0:
        f = fwl(gt, pred, cfg.theta_mode)
        parts["fwl"] = float(f.data)
        loss = loss + f * lam
    else:
        parts["fwl"] = float(fwl(T.as_tensor(gt).detach(), T.as_tensor(pred).detach(), cfg.theta_mode).data)
    parts["total"] = float(loss.data)
    return loss, parts


# ---------------------------------------------------------------------------
# metrics (numpy in, floats out)
# ---------------------------------------------------------------------------

def _pair_arrays(a, b):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    _check_pair(a, b)
    return a, b


def _per_image(values: np.ndarray):
    return float(values) if values.ndim == 0 else float(values.mean())


def lfd_map(a, b) -> np.ndarray:
    """Per-image log frequency distance (channels averaged)."""
    a, b = _pair_arrays(a, b)
    d = np.abs(np.fft.fft2(a - b, axes=(-3, -2))) ** 2
    return np.log(d.mean(axis=(-3, -2)) + 1.0).mean(axis=-1)


def lfd(a, b) -> float:
    return _per_image(lfd_map(a, b))


def psnr_map(a, b, peak: float = 1.0) -> np.ndarray:
    a, b = _pair_arrays(a, b)
    mse = ((a - b) ** 2).mean(axis=(-3, -2, -1))
    with np.errstate(divide="ignore"):
        return np.where(mse == 0, np.inf, 10.0 * np.log10(peak ** 2 / np.where(mse == 0, 1.0, mse)))


def psnr(a, b, peak: float = 1.0) -> float:
    return _per_image(psnr_map(a, b, peak))


SSIM_WINDOW = 8
SSIM_K1, SSIM_K2 = 0.01, 0.03


def ssim_map(a, b, data_range: float = 1.0, window: int = SSIM_WINDOW) -> np.ndarray:
    """Mean SSIM per image over all ``window x window`` positions and channels."""
    a, b = _pair_arrays(a, b)
    win = min(window, a.shape[-3], a.shape[-2])
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def win_mean(x):
        return sliding_window_view(x, (win, win), axis=(-3, -2)).mean(axis=(-2, -1))

    mu_a, mu_b = win_mean(a), win_mean(b)
    var_a = win_mean(a * a) - mu_a ** 2
    var_b = win_mean(b * b) - mu_b ** 2
    cov = win_mean(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return s.mean(axis=(-3, -2, -1))


def ssim(a, b, data_range: float = 1.0) -> float:
    return _per_image(ssim_map(a, b, data_range))


METRIC_COLUMNS = ("image_id", "psnr_db", "ssim", "lfd", "l1", "fwl")


def metric_rows(reference, output, ids=None, theta_mode: str = "sqrt_normalized") -> list:
    """One metrics dict per image of ``[N, H, W, C]`` stacks."""
    reference, output = _pair_arrays(reference, output)
    if reference.ndim == 3:
        reference, output = reference[None], output[None]
    ids = list(ids) if ids is not None else [f"{i:04d}" for i in range(len(reference))]
    p, s, q = psnr_map(reference, output), ssim_map(reference, output), lfd_map(reference, output)
    rows = []
    for i, image_id in enumerate(ids):
        rows.append({
            "image_id": image_id,
            "psnr_db": float(p[i]),
            "ssim": float(s[i]),
            "lfd": float(q[i]),
            "l1": float(np.abs(reference[i] - output[i]).mean()),
            "fwl": float(fwl(reference[i], output[i], theta_mode).data),
        })
    return rows


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def summarize(rows) -> dict:
    out = {}
    for key in METRIC_COLUMNS[1:]:
        vals = [r[key] for r in rows]
        out[key] = float(np.mean(vals)) if vals else math.nan
    return out
