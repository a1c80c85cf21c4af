"""Synthetic paired underwater data.

Clean procedural images are degraded with a per-channel attenuation and
veiling-light model::

    I_c = J_c * exp(-beta_c * z) + A_c * (1 - exp(-beta_c * z))

over a smooth depth map ``z``, followed by Gaussian blur, additive noise and
clamping to ``[0, 1]``. Every sample draws from its own generator seeded by
``(master_seed, index)`` so content does not depend on generation order.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError, FormatError
from .io import read_image, write_image

CLEAN_FAMILIES = ("gradient", "checker", "noise", "shapes")


@dataclass
class DegradationParams:
    beta: tuple = (0.9, 0.35, 0.2)
    ambient: tuple = (0.05, 0.35, 0.45)
    depth_range: tuple = (0.5, 3.0)
    blur_sigma: float = 0.6
    noise_sigma: float = 0.01

    def validate(self, path: str = "degradation") -> "DegradationParams":
        beta = tuple(float(b) for b in self.beta)
        ambient = tuple(float(a) for a in self.ambient)
        if len(beta) != 3:
            raise ConfigError("beta needs three channels", f"{path}.beta")
        if not beta[0] >= beta[1] >= beta[2] >= 0:
            raise ConfigError(f"attenuation must satisfy red >= green >= blue >= 0, got {beta}", f"{path}.beta")
        if len(ambient) != 3 or not all(0.0 <= a <= 1.0 for a in ambient):
            raise ConfigError(f"ambient light must lie in [0, 1], got {ambient}", f"{path}.ambient")
        lo, hi = self.depth_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad depth range {self.depth_range}", f"{path}.depth_range")
        if self.blur_sigma < 0:
            raise ConfigError("blur_sigma must be >= 0", f"{path}.blur_sigma")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0", f"{path}.noise_sigma")
        return self

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class PairedSample:
    clean: np.ndarray         # [H, W, 3]
    degraded: np.ndarray      # [H, W, 3]
    params: DegradationParams
    depth_map: np.ndarray     # [H, W]


def sample_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(master_seed), int(index)])


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid used on disk, so in-memory and file data agree."""
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255) / 255.0


# ---------------------------------------------------------------------------
# clean images
# ---------------------------------------------------------------------------

def _gradient(rng, H, W):
    yy, xx = np.meshgrid(np.linspace(0, 1, H), np.linspace(0, 1, W), indexing="ij")
    angle = rng.uniform(0, 2 * np.pi)
    t = np.cos(angle) * xx + np.sin(angle) * yy
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    return c0 + (c1 - c0) * t[..., None]


def _checker(rng, H, W):
    cell = int(rng.integers(2, max(3, min(H, W) // 4) + 1))
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    mask = ((yy // cell + xx // cell) % 2).astype(np.float64)
    c0, c1 = rng.uniform(0.05, 0.45, 3), rng.uniform(0.55, 0.95, 3)
    return c0 + (c1 - c0) * mask[..., None]


def _noise(rng, H, W):
    sigma = rng.uniform(1.0, 4.0)
    img = ndimage.gaussian_filter(rng.standard_normal((H, W, 3)), sigma=(sigma, sigma, 0), mode="wrap")
    img -= img.min(axis=(0, 1))
    img /= np.maximum(img.max(axis=(0, 1)), 1e-12)
    return 0.1 + 0.8 * img


def _shapes(rng, H, W):
    img = np.broadcast_to(rng.uniform(0.2, 0.8, 3), (H, W, 3)).copy()
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        r = rng.uniform(0.08, 0.3) * min(H, W)
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        else:
            mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r * rng.uniform(0.4, 1.0))
        img[mask] = rng.uniform(0.0, 1.0, 3)
    return img


_FAMILY_FNS = {"gradient": _gradient, "checker": _checker, "noise": _noise, "shapes": _shapes}


def make_clean_image(rng, H: int, W: int, family: str) -> np.ndarray:
    try:
        fn = _FAMILY_FNS[family]
    except KeyError:
        raise ConfigError(f"unknown image family {family!r}") from None
    return np.clip(fn(rng, H, W), 0.0, 1.0)


def make_clean(seed: int, n: int, H: int, W: int, families=CLEAN_FAMILIES) -> np.ndarray:
    """``[n, H, W, 3]`` procedural images; the family cycles with the index."""
    out = np.empty((n, H, W, 3))
    for i in range(n):
        out[i] = make_clean_image(sample_rng(seed, i), H, W, families[i % len(families)])
    return out


# ---------------------------------------------------------------------------
# degradation
# ---------------------------------------------------------------------------

def make_depth(rng, H: int, W: int, depth_range=(0.5, 3.0)) -> np.ndarray:
    """Smooth depth: a random ramp plus low-frequency noise, rescaled to the range."""
    yy, xx = np.meshgrid(np.linspace(0, 1, H), np.linspace(0, 1, W), indexing="ij")
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    blob = ndimage.gaussian_filter(rng.standard_normal((H, W)), sigma=max(H, W) / 6, mode="reflect")
    blob /= max(np.abs(blob).max(), 1e-12)
    z = ramp + 0.5 * blob
    z = (z - z.min()) / max(z.max() - z.min(), 1e-12)
    lo, hi = depth_range
    return lo + (hi - lo) * z


def attenuate(clean: np.ndarray, depth: np.ndarray, beta, ambient) -> np.ndarray:
    """Noise-free, blur-free imaging model."""
    t = np.exp(-np.asarray(beta, dtype=np.float64) * np.asarray(depth, dtype=np.float64)[..., None])
    return clean * t + np.asarray(ambient, dtype=np.float64) * (1.0 - t)


def degrade(clean, params: DegradationParams | None = None, seed: int = 0, depth=None) -> PairedSample:
    params = (params or DegradationParams()).validate()
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 3 or clean.shape[-1] != 3:
        raise ConfigError(f"clean image must be [H, W, 3], got {clean.shape}")
    if clean.size and (clean.min() < 0 or clean.max() > 1):
        raise ConfigError("clean image values must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    H, W, _ = clean.shape
    depth_map = make_depth(rng, H, W, params.depth_range) if depth is None else np.broadcast_to(
        np.asarray(depth, dtype=np.float64), (H, W)).copy()
    out = attenuate(clean, depth_map, params.beta, params.ambient)
    if params.blur_sigma > 0:
        out = ndimage.gaussian_filter(out, sigma=(params.blur_sigma, params.blur_sigma, 0), mode="reflect")
    if params.noise_sigma > 0:
        out = out + params.noise_sigma * rng.standard_normal(out.shape)
    return PairedSample(clean, np.clip(out, 0.0, 1.0), params, depth_map)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    crop: int | None = None
    p_rotate: float = 0.5
    p_hflip: float = 0.5
    p_vflip: float = 0.5


def _transform_params(rng, H, W, cfg: AugmentConfig):
    if cfg.crop is not None and (cfg.crop > H or cfg.crop > W or cfg.crop < 1):
        raise ConfigError(f"crop {cfg.crop} does not fit a {H}x{W} image", "augment.crop")
    top = left = 0
    if cfg.crop is not None:
        top = int(rng.integers(0, H - cfg.crop + 1))
        left = int(rng.integers(0, W - cfg.crop + 1))
    k = int(rng.integers(1, 4)) if rng.random() < cfg.p_rotate else 0
    hflip = bool(rng.random() < cfg.p_hflip)
    vflip = bool(rng.random() < cfg.p_vflip)
    return top, left, k, hflip, vflip


def _apply(img, crop, top, left, k, hflip, vflip):
    if crop is not None:
        img = img[top:top + crop, left:left + crop]
    if k:
        img = np.rot90(img, k, axes=(0, 1))
    if hflip:
        img = img[:, ::-1]
    if vflip:
        img = img[::-1]
    return np.ascontiguousarray(img)


def augment_arrays(arrays, rng, cfg: AugmentConfig | None = None) -> list:
    """Apply one random geometric transform identically to every ``[H, W, ...]`` array."""
    cfg = cfg or AugmentConfig()
    H, W = arrays[0].shape[:2]
    top, left, k, hflip, vflip = _transform_params(rng, H, W, cfg)
    if k % 2 and cfg.crop is None and H != W:
        k = 0  # keep extents fixed for non-square images
    return [_apply(a, cfg.crop, top, left, k, hflip, vflip) for a in arrays]


def augment(sample: PairedSample, seed: int = 0, cfg: AugmentConfig | None = None) -> PairedSample:
    rng = np.random.default_rng(seed)
    clean, degraded, depth = augment_arrays([sample.clean, sample.degraded, sample.depth_map], rng, cfg)
    return replace(sample, clean=clean, degraded=degraded, depth_map=depth)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class PairedDataset:
    clean: np.ndarray                  # [N, H, W, 3], 8-bit grid
    degraded: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    meta: dict = field(default_factory=dict)

    def split(self, name: str):
        idx = self.train_idx if name == "train" else self.val_idx
        return self.degraded[idx], self.clean[idx]

    def baseline_psnr(self, name: str = "val") -> float:
        from .losses import psnr
        x, y = self.split(name)
        return psnr(y, x)


def build_dataset(n_train: int, n_val: int, H: int, W: int, params: DegradationParams | None = None,
                  seed: int = 0) -> PairedDataset:
    params = (params or DegradationParams()).validate()
    n = n_train + n_val
    clean = make_clean(seed, n, H, W)
    degraded = np.empty_like(clean)
    seeds = []
    for i in range(n):
        s = int(sample_rng(seed, i).integers(2 ** 63))
        seeds.append(s)
        degraded[i] = degrade(clean[i], params, s).degraded
    meta = {
        "master_seed": seed,
        "height": H,
        "width": W,
        "params": params.to_dict(),
        "sample_seeds": seeds,
        "train": list(range(n_train)),
        "val": list(range(n_train, n)),
    }
    return PairedDataset(quantize(clean), quantize(degraded), np.arange(n_train), np.arange(n_train, n), meta)


def save_dataset(ds: PairedDataset, root) -> None:
    os.makedirs(os.path.join(root, "clean"), exist_ok=True)
    os.makedirs(os.path.join(root, "degraded"), exist_ok=True)
    for i in range(len(ds.clean)):
        write_image(os.path.join(root, "clean", f"{i:04d}.ppm"), ds.clean[i])
        write_image(os.path.join(root, "degraded", f"{i:04d}.ppm"), ds.degraded[i])
    meta = dict(ds.meta, train=[int(i) for i in ds.train_idx], val=[int(i) for i in ds.val_idx])
    with open(os.path.join(root, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_dataset(root) -> PairedDataset:
    meta_path = os.path.join(root, "meta.json")
    if not os.path.exists(meta_path):
        raise FormatError(f"no meta.json in {root}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    n = len(meta["train"]) + len(meta["val"])
    clean = np.stack([read_image(os.path.join(root, "clean", f"{i:04d}.ppm")) for i in range(n)]) if n else None
    degraded = np.stack([read_image(os.path.join(root, "degraded", f"{i:04d}.ppm")) for i in range(n)]) if n else None
    return PairedDataset(clean, degraded, np.asarray(meta["train"], dtype=int), np.asarray(meta["val"], dtype=int),
                         meta)
