"""scikit-learn style wrapper: ``fit`` / ``predict`` / ``predict_proba`` / ``score``."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from . import metrics
from .engine.functional import _stable_sigmoid
from .model.config import DESK_CHANNELS, ModelConfig
from .training import RunConfig, predict_logits, train


def check_images(X, dtype=np.float64) -> np.ndarray:
    """Validate a stack of single-channel maps; returns (N, H, W).

    Accepts (N, H, W) or (N, 1, H, W); a single (H, W) map is rejected so
    that batch and image axes are never confused.
    """
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=dtype, ensure_all_finite=True)
    if X.ndim == 4 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 3:
        raise ValueError(f"expected images of shape (N, H, W) or (N, 1, H, W), got {X.shape}")
    h, w = X.shape[1:]
    if h % 32 or w % 32:
        raise ValueError(f"image extents {h}x{w} must be multiples of 32")
    if X.min() < 0 or X.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    return X


def check_masks(y, shape) -> np.ndarray:
    y = check_array(y, allow_nd=True, ensure_2d=False, dtype=None, ensure_all_finite=True)
    if y.ndim == 4 and y.shape[1] == 1:
        y = y[:, 0]
    if y.shape != tuple(shape):
        raise ValueError(f"mask shape {y.shape} does not match images {tuple(shape)}")
    vals = np.unique(y)
    if not np.isin(vals, (0, 1)).all():
        raise ValueError(f"masks must be binary {{0, 1}}, found values {vals[:8]}")
    return y.astype(np.uint8)


class SAMambaSegmenter(BaseEstimator):
    """Small-target segmenter on single-channel images with values in [0, 1].

    ``X`` is (N, H, W) with H and W multiples of 32; ``y`` is a binary
    (N, H, W) mask.  ``predict`` returns binary masks thresholded at 0.5.
    """

    def __init__(
        self,
        stage_channels=DESK_CHANNELS,
        csi_width=32,
        csi_heads=4,
        dpcf_segments=4,
        fusion="adaptive",
        use_csi=True,
        use_adapter=True,
        epochs=300,
        batch_size=2,
        lr=1e-4,
        lr_step=100,
        lr_gamma=0.1,
        augment=True,
        max_steps=0,
        precision="f32",
        random_state=0,
    ):
        self.stage_channels = stage_channels
        self.csi_width = csi_width
        self.csi_heads = csi_heads
        self.dpcf_segments = dpcf_segments
        self.fusion = fusion
        self.use_csi = use_csi
        self.use_adapter = use_adapter
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_step = lr_step
        self.lr_gamma = lr_gamma
        self.augment = augment
        self.max_steps = max_steps
        self.precision = precision
        self.random_state = random_state

    def _run_config(self) -> RunConfig:
        cfg = ModelConfig(
            stage_channels=tuple(self.stage_channels),
            csi_width=self.csi_width,
            csi_heads=self.csi_heads,
            dpcf_segments=self.dpcf_segments,
            fusion=self.fusion,
            use_csi=self.use_csi,
            use_adapter=self.use_adapter,
            seed=int(self.random_state),
        )
        return RunConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            lr_step=self.lr_step,
            lr_gamma=self.lr_gamma,
            seed=int(self.random_state),
            precision=self.precision,
            augment=self.augment,
            max_steps=self.max_steps,
            model=cfg,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_images(X)
        y = check_masks(y, X.shape)
        if X_val is not None:
            X_val = check_images(X_val)
            y_val = check_masks(y_val, X_val.shape)
        run = self._run_config()
        result = train(run, X, y, X_val, y_val)
        self.model_ = result.model
        self.history_ = result.history
        self.n_steps_ = result.steps
        self.image_shape_ = X.shape[1:]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("SAMambaSegmenter is not fitted yet; call fit first")

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        return predict_logits(self.model_, check_images(X))

    def predict_proba(self, X) -> np.ndarray:
        """Per-pixel target probability, shape (N, H, W)."""
        return _stable_sigmoid(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(np.uint8)

    def score(self, X, y) -> float:
        """Dataset-level IoU of the predicted masks."""
        X = check_images(X)
        y = check_masks(y, X.shape)
        return metrics.dataset_iou(_accumulate(self.predict(X), y))

    def evaluate(self, X, y) -> dict:
        X = check_images(X)
        y = check_masks(y, X.shape)
        return metrics.summarize(_accumulate(self.predict(X), y))


def _accumulate(pred, y):
    acc = metrics.EvalAccumulator()
    acc.update(pred, y)
    return acc
