"""Scikit-learn style estimator facade over the model and trainer.

``FthnetQualityRegressor`` makes the scorer composable with the wider
sklearn ecosystem: ``fit(X, y)`` on image paths or arrays with MOS
targets, ``predict(X)`` for scores, ``get_params``/``set_params`` for
search utilities.
"""

from __future__ import annotations

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, RegressorMixin

from . import metrics
from .config import profile
from .trainer import ArrayDataset, TrainConfig, predict_scores, train


def as_image_array(item) -> np.ndarray:
    """Validation helper: accepts a path or an HxWx3 uint8 array."""
    if isinstance(item, (str, bytes)) or hasattr(item, "__fspath__"):
        return np.asarray(Image.open(item).convert("RGB"))
    arr = np.asarray(item)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.max() <= 1.0:
            arr = (arr * 255.0).round()
        arr = arr.astype(np.uint8)
    return arr


def check_image_list(X) -> list[np.ndarray]:
    images = [as_image_array(item) for item in X]
    if not images:
        raise ValueError("X must contain at least one image")
    return images


def check_mos(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != n:
        raise ValueError(f"y has {y.size} targets for {n} images")
    if ((y < 0) | (y > 100)).any():
        raise ValueError("MOS targets must lie in [0, 100]")
    return y


class FthnetQualityRegressor(BaseEstimator, RegressorMixin):
    """No-reference image quality regressor with a fit/predict surface.

    Parameters mirror the model profile and the training schedule; all
    are plain constructor arguments so sklearn tooling can clone and
    grid-search the estimator.
    """

    def __init__(self, model_profile: str = "fthnet-s", input_size: int = 96,
                 hypernet_mode: str = "stepwise", loss_kind: str = "smooth_l1",
                 shift: bool = True, lr_peak: float = 3e-4, warmup_iters: int = 100,
                 max_iters: int = 1500, batch_size: int = 16, seed: int = 0):
        self.model_profile = model_profile
        self.input_size = input_size
        self.hypernet_mode = hypernet_mode
        self.loss_kind = loss_kind
        self.shift = shift
        self.lr_peak = lr_peak
        self.warmup_iters = warmup_iters
        self.max_iters = max_iters
        self.batch_size = batch_size
        self.seed = seed

    def _model_config(self):
        return profile(self.model_profile, input_size=self.input_size,
                       hypernet_mode=self.hypernet_mode, loss_kind=self.loss_kind,
                       shift=self.shift)

    def _train_config(self):
        return TrainConfig(lr_peak=self.lr_peak, warmup_iters=self.warmup_iters,
                           max_iters=self.max_iters, batch_size=self.batch_size,
                           seed=self.seed)

    def fit(self, X, y):
        images = check_image_list(X)
        targets = check_mos(y, len(images))
        data = ArrayDataset(images, targets)
        result = train(self._model_config(), self._train_config(), data,
                       train_ids=list(range(len(images))))
        self.model_ = result.model
        self.history_ = result.history
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit(X, y) first")

    def predict(self, X) -> np.ndarray:
        self._require_fitted()
        images = check_image_list(X)
        data = ArrayDataset(images, np.zeros(len(images)))
        return predict_scores(self.model_, data, list(range(len(images))),
                              self.batch_size)

    def evaluate(self, X, y) -> dict:
        """RMSE / PLCC / SRCC of the fitted model on (X, y)."""
        self._require_fitted()
        preds = self.predict(X)
        targets = check_mos(y, len(preds))
        return {"rmse": metrics.rmse(preds, targets),
                "plcc": metrics.plcc(preds, targets),
                "srcc": metrics.srcc(preds, targets)}
