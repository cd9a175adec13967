"""Scikit-learn style estimator wrapping the model zoo and training loop.

``FloodImageDetector`` takes unit-domain image arrays, handles normalization
and seeding internally, and exposes the usual fit/predict/predict_proba
surface plus ``predict_mask`` for the localization branch, so it composes
with sklearn model selection and pipelines.
"""

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import InvalidConfigError, UnsupportedModelError
from .losses import LossWeights
from .manifest import split_manifest  # noqa: F401  (re-exported convenience)
from .networks import BackboneSpec, HybridNet, prepare_baseline_input
from .preprocess import PreprocessConfig, normalize_batch, to_batch_tensor
from .trainer import (
    ArrayBatchSource,
    TrainConfig,
    build_model,
    make_meta,
    run_training,
)
from .validation import check_image_batch, check_labels, check_mask_batch


class FloodImageDetector(BaseEstimator):
    """Binary GAN-manipulation detector with optional pixel localization.

    Parameters mirror the training recipe: the hybrid variant adds the
    localization branch weighted by ``lambda_loc``; ``plain``/``cat``/``mul``
    are the detector-only baselines. Inputs to fit/predict are float arrays
    of shape (N, H, W, 3) with values in [0, 1]; H and W must be divisible
    by the backbone stride.
    """

    def __init__(self, variant="hybrid", backbone="residual50", output_stride=None,
                 feature_channels=None, head_channels=256, epochs=30,
                 learning_rate=1e-4, batch_size=16, lambda_det=0.4, lambda_loc=0.6,
                 validation_fraction=0.2, seed=0, device="cpu"):
        self.variant = variant
        self.backbone = backbone
        self.output_stride = output_stride
        self.feature_channels = feature_channels
        self.head_channels = head_channels
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.lambda_det = lambda_det
        self.lambda_loc = lambda_loc
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.device = device

    # -- internals ---------------------------------------------------------

    def _backbone_spec(self):
        return BackboneSpec(
            family=self.backbone,
            output_stride=self.output_stride,
            feature_channels=self.feature_channels,
        ).resolved()

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "This FloodImageDetector instance is not fitted yet; call fit first."
            )

    def _validate_X(self, X):
        spec = self._backbone_spec()
        return check_image_batch(X, size_multiple=spec.output_stride)

    def _split_indices(self, y, rng):
        """Stratified holdout indices for best-epoch selection."""
        n = len(y)
        if not 0 < self.validation_fraction < 1:
            raise InvalidConfigError(
                f"validation_fraction must be in (0, 1), got {self.validation_fraction}"
            )
        val_idx = []
        for cls in np.unique(y):
            idx = np.flatnonzero(y == cls)
            rng.shuffle(idx)
            k = max(1, int(round(self.validation_fraction * idx.size)))
            k = min(k, idx.size - 1) if idx.size > 1 else 0
            val_idx.extend(idx[:k].tolist())
        val = np.zeros(n, dtype=bool)
        val[val_idx] = True
        return ~val, val

    # -- sklearn surface ----------------------------------------------------

    def fit(self, X, y, masks=None):
        """Train on unit-domain images; masks are required for ``hybrid``
        targets and for the ``cat``/``mul`` input conditioning of fakes."""
        X = self._validate_X(X)
        y = check_labels(y, n=X.shape[0])
        if masks is not None:
            masks = check_mask_batch(masks, shape=X.shape[1:3])

        pp_cfg = PreprocessConfig(target_size=X.shape[1])
        cfg = TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seed=self.seed,
            loss_weights=LossWeights(self.lambda_det, self.lambda_loc),
            device=self.device,
        )
        spec = self._backbone_spec()
        torch.manual_seed(self.seed)
        model = build_model(self.variant, spec, head_channels=self.head_channels)

        rng = np.random.default_rng(self.seed)
        train_mask, val_mask = self._split_indices(y, rng)

        def subset(sel):
            return ArrayBatchSource(
                X[sel], y[sel],
                masks=None if masks is None else masks[sel],
                pp_cfg=pp_cfg, variant=self.variant,
                training=bool(sel is train_mask), base_seed=self.seed,
            )

        meta = make_meta(self.variant, spec, self.head_channels, cfg.loss_weights, pp_cfg)
        result, history = run_training(
            model, subset(train_mask), subset(val_mask), cfg, meta=meta
        )
        self.model_ = model
        self.classes_ = np.array([0, 1])
        self.history_ = history
        self.best_epoch_ = result.best_epoch
        self.input_size_ = X.shape[1:3]
        self.preprocess_config_ = pp_cfg
        return self

    @torch.no_grad()
    def _forward(self, X, masks=None):
        self._check_fitted()
        X = self._validate_X(X)
        pp_cfg = self.preprocess_config_
        unit = to_batch_tensor(X).to(self.device)
        if masks is not None:
            masks = check_mask_batch(masks, shape=X.shape[1:3])
        self.model_.eval()

        out_scores, out_maps = [], []
        for start in range(0, X.shape[0], self.batch_size):
            stop = start + self.batch_size
            chunk = unit[start:stop]
            if isinstance(self.model_, HybridNet):
                scores, maps = self.model_(normalize_batch(chunk, pp_cfg))
                out_maps.append(maps.cpu().numpy())
            elif self.variant == "plain":
                scores = self.model_(normalize_batch(chunk, pp_cfg))
            else:
                if masks is None:
                    mask_chunk = torch.zeros(chunk.shape[0], *X.shape[1:3])
                else:
                    mask_chunk = torch.from_numpy(masks[start:stop].astype(np.float32))
                if self.variant == "mul":
                    scores = self.model_(prepare_baseline_input("mul", chunk, mask_chunk, pp_cfg))
                else:
                    scores = self.model_(
                        prepare_baseline_input(
                            "cat", normalize_batch(chunk, pp_cfg), mask_chunk, pp_cfg
                        )
                    )
            out_scores.append(scores.cpu().numpy())
        scores = np.concatenate(out_scores)
        maps = np.concatenate(out_maps) if out_maps else None
        return scores, maps

    def decision_function(self, X, masks=None):
        """Detection score in (0, 1); higher means more likely manipulated."""
        return self._forward(X, masks)[0]

    def predict_proba(self, X, masks=None):
        scores = self.decision_function(X, masks)
        return np.stack([1.0 - scores, scores], axis=1)

    def predict(self, X, masks=None):
        return (self.decision_function(X, masks) >= 0.5).astype(np.int64)

    def predict_mask(self, X):
        """Per-pixel manipulation probability maps (hybrid variant only)."""
        self._check_fitted()
        if not isinstance(self.model_, HybridNet):
            raise UnsupportedModelError(
                f"variant {self.variant!r} has no localization branch"
            )
        return self._forward(X)[1]

    def score(self, X, y, masks=None):
        """Detection accuracy at the 0.5 threshold."""
        y = check_labels(np.asarray(y))
        return float((self.predict(X, masks) == y).mean())
