"""Training losses: detection BCE, localization BCE, weighted total.

Both losses are the standard negated cross-entropy, averaged over samples
(detection) or over every pixel of every map (localization). Probabilities
are clamped to [EPS, 1 - EPS] before the logs.
"""

from dataclasses import dataclass

import torch

from .errors import InvalidConfigError, ShapeError

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_det: float = 0.4
    lambda_loc: float = 0.6

    def __post_init__(self):
        if self.lambda_det < 0 or self.lambda_loc < 0:
            raise InvalidConfigError(
                f"loss weights must be nonnegative, got {self.lambda_det}, {self.lambda_loc}"
            )
        if self.lambda_det == 0 and self.lambda_loc == 0:
            raise InvalidConfigError("loss weights cannot both be zero")


def detection_loss(scores, labels):
    """Mean binary cross-entropy between per-image scores and 0/1 labels."""
    scores = scores if torch.is_tensor(scores) else torch.as_tensor(scores)
    labels = labels if torch.is_tensor(labels) else torch.as_tensor(labels)
    if scores.ndim != 1:
        raise ShapeError(f"scores must be 1-dimensional, got shape {tuple(scores.shape)}")
    if scores.shape != labels.shape:
        raise ShapeError(
            f"scores and labels disagree: {tuple(scores.shape)} vs {tuple(labels.shape)}"
        )
    if scores.numel() == 0:
        raise ShapeError("detection_loss needs at least one sample")
    y = torch.clamp(scores, EPS, 1.0 - EPS)
    t = labels.to(y.dtype)
    return -(t * torch.log(y) + (1.0 - t) * torch.log(1.0 - y)).mean()


def localization_loss(maps, gt_masks):
    """Mean per-pixel binary cross-entropy between probability maps and masks.

    The average runs over N * H * W, i.e. every pixel of every image counts
    equally.
    """
    maps = maps if torch.is_tensor(maps) else torch.as_tensor(maps)
    gt_masks = gt_masks if torch.is_tensor(gt_masks) else torch.as_tensor(gt_masks)
    if maps.shape != gt_masks.shape:
        raise ShapeError(
            f"maps and masks disagree: {tuple(maps.shape)} vs {tuple(gt_masks.shape)}"
        )
    if maps.numel() == 0:
        raise ShapeError("localization_loss needs at least one pixel")
    m = torch.clamp(maps, EPS, 1.0 - EPS)
    g = gt_masks.to(m.dtype)
    return -(g * torch.log(m) + (1.0 - g) * torch.log(1.0 - m)).mean()


def total_loss(l_det, l_loc, weights: LossWeights):
    """Weighted sum of the two task losses."""
    return weights.lambda_det * l_det + weights.lambda_loc * l_loc
