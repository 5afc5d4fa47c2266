"""Scikit-learn style estimator facade over the adaptation trainer.

fit() consumes labeled source scenes plus unlabeled target scenes; predict()
runs attention-off inference. Hyperparameters mirror the run config so a
fitted estimator and a CLI run are interchangeable.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .metrics import ConfusionMatrix, iou
from .synthdata import SceneSpec
from .trainer import ModelConfig, OptimSettings, TrainConfig, Trainer


def check_scene_array(X, name: str = "X") -> np.ndarray:
    """Validate a (n, H, W, C) float scene batch."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(
            f"{name} must have shape (n_scenes, height, width, channels), "
            f"got {np.asarray(X).shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_label_array(y, n_scenes: int, spatial, n_classes=None) -> np.ndarray:
    """Validate an (n, H, W) integer label batch against the scene batch."""
    arr = np.asarray(y)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] != n_scenes or arr.shape[1:] != spatial:
        raise ValueError(
            f"labels must have shape ({n_scenes}, {spatial[0]}, {spatial[1]}), "
            f"got {np.asarray(y).shape}"
        )
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(arr)
        if not np.allclose(arr, rounded):
            raise ValueError("labels must be integers")
        arr = rounded.astype(np.int64)
    if arr.min() < 0:
        raise ValueError("labels must be non-negative")
    if n_classes is not None and arr.max() >= n_classes:
        raise ValueError(
            f"labels must lie in [0, {n_classes}), got max {arr.max()}"
        )
    return arr.astype(np.int64)


class DomainAdaptiveSegmenter(BaseEstimator):
    """Per-pixel classifier adapted from a labeled source domain to an
    unlabeled target domain.

    Parameters follow the run config: loss weights, component toggles, the
    pseudo-label selection schedule, network widths and optimizer settings.
    """

    def __init__(self, n_classes=None, epochs=10, gamma=0.25, critic_weight=0.3,
                 adv_weight=0.001, div_weight=10.0, use_critic=True,
                 use_pseudo=True, use_div=True, literal_adv=False,
                 normalize_entropy=True, select_start=0.35, select_step=0.05,
                 select_cap=0.50, feature_channels=32, width_factor=0.25,
                 optimizer="adam", lr_seg=2e-3, lr_disc=5e-4, lr_critic=1e-3,
                 random_state=0):
        self.n_classes = n_classes
        self.epochs = epochs
        self.gamma = gamma
        self.critic_weight = critic_weight
        self.adv_weight = adv_weight
        self.div_weight = div_weight
        self.use_critic = use_critic
        self.use_pseudo = use_pseudo
        self.use_div = use_div
        self.literal_adv = literal_adv
        self.normalize_entropy = normalize_entropy
        self.select_start = select_start
        self.select_step = select_step
        self.select_cap = select_cap
        self.feature_channels = feature_channels
        self.width_factor = width_factor
        self.optimizer = optimizer
        self.lr_seg = lr_seg
        self.lr_disc = lr_disc
        self.lr_critic = lr_critic
        self.random_state = random_state

    def _build_config(self, shape, n_classes) -> TrainConfig:
        _, h, w, c = shape
        if h != w:
            raise ValueError(f"scenes must be square, got {h}x{w}")
        return TrainConfig(
            seed=self.random_state,
            epochs=self.epochs,
            gamma=self.gamma,
            critic_weight=self.critic_weight,
            adv_weight=self.adv_weight,
            div_weight=self.div_weight,
            use_critic=self.use_critic,
            use_pseudo=self.use_pseudo,
            use_div=self.use_div,
            literal_adv=self.literal_adv,
            normalize_entropy=self.normalize_entropy,
            select_start=self.select_start,
            select_step=self.select_step,
            select_cap=self.select_cap,
            data=SceneSpec(size=h, classes=n_classes, channels=c),
            model=ModelConfig(
                feature_channels=self.feature_channels,
                width_factor=self.width_factor,
            ),
            optim=OptimSettings(
                kind=self.optimizer,
                lr_seg=self.lr_seg,
                lr_disc=self.lr_disc,
                lr_critic=self.lr_critic,
            ),
        )

    def fit(self, X, y, X_target=None):
        """Train on labeled source scenes plus (optionally) unlabeled target
        scenes. Without X_target this degenerates to source-only training."""
        X = check_scene_array(X, "X")
        y = check_label_array(y, X.shape[0], X.shape[1:3], self.n_classes)
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if X_target is None:
            X_target = X
            config = self._build_config(X.shape, k)
            config.use_critic = False
            config.use_pseudo = False
            config.use_div = False
            config.adv_weight = 0.0
        else:
            X_target = check_scene_array(X_target, "X_target")
            if X_target.shape[1:] != X.shape[1:]:
                raise ValueError(
                    f"target scenes {X_target.shape[1:]} do not match source "
                    f"scenes {X.shape[1:]}"
                )
            config = self._build_config(X.shape, k)
        self.n_classes_ = k
        self.trainer_ = Trainer(config)
        self.history_ = self.trainer_.fit(X, y, X_target)
        self.model_ = self.trainer_.model
        return self

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_scene_array(X, "X")
        return self.trainer_.predict_proba(X)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=-1)

    def score(self, X, y) -> float:
        """Mean IoU of the attention-off predictions against y."""
        self._check_fitted()
        X = check_scene_array(X, "X")
        y = check_label_array(y, X.shape[0], X.shape[1:3], self.n_classes_)
        cm = ConfusionMatrix(self.n_classes_)
        preds = self.predict(X)
        for truth, pred in zip(y, preds):
            cm.add(truth, pred)
        _, miou = iou(cm)
        return miou

    def _check_fitted(self):
        if not hasattr(self, "trainer_"):
            raise RuntimeError("estimator is not fitted; call fit() first")
