"""Gradient-weighted class-activation maps and side-by-side panel rendering.

The CAM targets the pre-sigmoid detection logit: channel weights are the
spatial means of the logit's gradient on the final backbone feature map, and
the heatmap is the rectified weighted channel sum, upsampled to the input
grid and min-max normalized.
"""

from dataclasses import dataclass

import matplotlib
import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ShapeError, UnsupportedModelError


@dataclass
class Heatmap:
    data: np.ndarray  # (H, W) in [0, 1]
    target: str = "detection_logit"


def normalize_heatmap(raw):
    """Min-max normalize to [0, 1]; a constant map collapses to all zeros."""
    raw = np.asarray(raw, dtype=np.float32)
    lo, hi = float(raw.min()), float(raw.max())
    if hi - lo <= 0:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def cam_map(model, image, mask=None) -> Heatmap:
    """Class-activation heatmap for the detection decision on one input.

    ``image`` is the model-ready input: either a (H, W, C) array or a
    (C, H, W) / (1, C, H, W) tensor in the model's expected domain. The model
    must expose ``features_and_logit`` returning a spatial feature map which
    the detection logit is differentiable with respect to.
    """
    if not hasattr(model, "features_and_logit"):
        raise UnsupportedModelError(
            f"{type(model).__name__} does not expose features for CAM"
        )
    if isinstance(image, np.ndarray):
        if image.ndim != 3:
            raise ShapeError(f"expected (H, W, C) array, got {image.shape}")
        x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        x = x.permute(2, 0, 1).unsqueeze(0)
    else:
        x = image if image.ndim == 4 else image.unsqueeze(0)

    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    try:
        features, logit = model.features_and_logit(x, mask=mask)
        if features.ndim != 4:
            raise UnsupportedModelError(
                f"CAM needs spatial N x C x h x w features, got {tuple(features.shape)}"
            )
        grads = torch.autograd.grad(logit.sum(), features)[0]
    finally:
        if was_training and hasattr(model, "train"):
            model.train()

    weights = grads.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * features).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam, size=x.shape[-2:], mode="bilinear", align_corners=False)
    return Heatmap(data=normalize_heatmap(cam[0, 0].detach().cpu().numpy()))


def _to_uint8(img):
    return np.clip(np.rint(np.asarray(img, dtype=np.float32) * 255.0), 0, 255).astype(np.uint8)


def _mask_to_rgb(mask):
    m = np.asarray(mask, dtype=np.float32)
    return np.repeat(m[..., None], 3, axis=2)


def overlay_heatmap(image_unit, heat, alpha=0.5, cmap="jet"):
    """Blend a color-ramped heatmap onto a unit-domain image."""
    ramp = matplotlib.colormaps[cmap](np.asarray(heat, dtype=np.float32))[..., :3]
    return (1.0 - alpha) * np.asarray(image_unit, dtype=np.float32) + alpha * ramp


def render_panel(image_unit, gt_mask, pred_mask, heatmap, out_path):
    """Write ``input | ground truth | predicted mask | CAM overlay`` as one PNG.

    ``pred_mask`` may be None (detector-only models); the panel then omits
    that column. Heatmap may be a Heatmap or a raw (H, W) array.
    """
    img = np.asarray(image_unit, dtype=np.float32)
    heat = heatmap.data if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    columns = [img, _mask_to_rgb(gt_mask)]
    if pred_mask is not None:
        columns.append(_mask_to_rgb(pred_mask))
    columns.append(overlay_heatmap(img, heat))

    h, w = img.shape[:2]
    for c in columns:
        if c.shape[:2] != (h, w):
            raise ShapeError(f"panel inputs disagree: {c.shape[:2]} vs {(h, w)}")
    panel = np.concatenate(columns, axis=1)
    Image.fromarray(_to_uint8(panel)).save(out_path)
    return out_path
