"""scikit-learn style wrapper around the enhancement network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import PairedDataset
from .errors import ShapeError
from .losses import LossConfig, psnr_map
from .network import EnhancementNet, preset
from .training import train, train_preset


def check_images(X, name: str = "X", allow_single: bool = False) -> np.ndarray:
    """Validate an RGB image stack ``[N, H, W, 3]`` with finite values in ``[0, 1]``."""
    X = np.asarray(X)
    if allow_single and X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ShapeError(f"{name} must have shape [N, H, W, 3], got {X.shape}")
    if X.dtype.kind not in "fiu":
        raise ValueError(f"{name} must be numeric, got dtype {X.dtype}")
    X = X.astype(np.float64, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    if X.size and (X.min() < 0 or X.max() > 1):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return X


def check_image_pairs(X, y):
    X, y = check_images(X, "X"), check_images(y, "y")
    if X.shape != y.shape:
        raise ShapeError(f"X {X.shape} and y {y.shape} must match")
    return X, y


class UnderwaterEnhancer(BaseEstimator, TransformerMixin):
    """Fit on (degraded, clean) pairs; ``transform`` returns enhanced images.

    The network is built for the extents of the training images; a
    ``val_fraction`` tail of the pairs is held out for checkpoint selection.
    """

    def __init__(self, network="desk", block_mode="parallel", scan_mode="cycle", epochs=30, lr=1e-3,
                 batch_size=8, use_fwl=True, auto_balance=True, val_fraction=1 / 6, seed=0, verbose=False):
        self.network = network
        self.block_mode = block_mode
        self.scan_mode = scan_mode
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.use_fwl = use_fwl
        self.auto_balance = auto_balance
        self.val_fraction = val_fraction
        self.seed = seed
        self.verbose = verbose

    def _build(self, H, W):
        cfg = preset(self.network, height=H, width=W, block_mode=self.block_mode, scan_mode=self.scan_mode,
                     seed=self.seed)
        return EnhancementNet(cfg)

    def fit(self, X, y):
        X, y = check_image_pairs(X, y)
        n = len(X)
        if n < 2:
            raise ValueError("need at least two image pairs (one is held out)")
        n_val = min(max(int(round(n * self.val_fraction)), 1), n - 1)
        self.model_ = self._build(X.shape[1], X.shape[2])
        data = PairedDataset(clean=y, degraded=X, train_idx=np.arange(n - n_val),
                             val_idx=np.arange(n - n_val, n))
        tcfg = train_preset("desk" if self.network == "desk" else "full", epochs=self.epochs, lr=self.lr,
                            batch_size=self.batch_size, seed=self.seed)
        lcfg = LossConfig(auto_balance=self.auto_balance, use_fwl=self.use_fwl)
        result = train(self.model_, data, tcfg, lcfg, verbose=self.verbose)
        self.history_ = result.history
        self.image_shape_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_images(X, allow_single=True)
        if X.shape[1:] != self.image_shape_:
            raise ShapeError(f"fitted for images {self.image_shape_}, got {X.shape[1:]}")
        return self.model_.predict(X).astype(np.float64)

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y):
        """Mean PSNR (dB) of the enhanced images against ``y``."""
        X, y = check_image_pairs(X, y)
        return float(np.mean(psnr_map(y, self.transform(X))))
