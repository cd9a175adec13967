"""Image decoding, resizing, normalization and color-jitter augmentation.

Images move through the pipeline as float32 H x W x 3 arrays. The "unit"
domain is [0, 1]; the "normalized" domain is per-channel standardized with
the configured mean/std. Masks are uint8 H x W arrays with values {0, 1}.
"""

from dataclasses import dataclass, field

import cv2
import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, InvalidConfigError, ShapeError

DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)

# ITU-R 601 luma weights, shared with the saturation/contrast jitter
_LUMA = np.array([0.2989, 0.587, 0.114], dtype=np.float32)


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 224
    channel_mean: tuple = DEFAULT_MEAN
    channel_std: tuple = DEFAULT_STD
    augment_factors: tuple = (0.05, 0.05, 0.05)
    augment_enabled: bool = False

    def __post_init__(self):
        if self.target_size <= 0:
            raise InvalidConfigError(f"target_size must be positive, got {self.target_size}")
        if len(self.channel_mean) != 3 or len(self.channel_std) != 3:
            raise InvalidConfigError("channel_mean and channel_std must each have 3 entries")
        if any(s <= 0 for s in self.channel_std):
            raise InvalidConfigError(f"channel_std must be positive, got {self.channel_std}")
        if len(self.augment_factors) != 3:
            raise InvalidConfigError("augment_factors must have 3 entries")
        if any(not (0 <= f < 1) for f in self.augment_factors):
            raise InvalidConfigError(
                f"augment_factors must lie in [0, 1), got {self.augment_factors}"
            )


def decode_image(path):
    """Decode a PNG/JPEG file to a float32 unit-domain H x W x 3 array."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DecodeError(path, str(e)) from e
    return arr / 255.0


def decode_mask(path):
    """Decode a single-channel mask PNG with values {0, 255} to uint8 {0, 1}."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DecodeError(path, str(e)) from e
    return (arr >= 128).astype(np.uint8)


def resize_image(img, size):
    """Bilinear resize to ``size`` (int for square, or (H, W) pair)."""
    h, w = (size, size) if np.isscalar(size) else size
    out = cv2.resize(np.asarray(img, dtype=np.float32), (int(w), int(h)),
                     interpolation=cv2.INTER_LINEAR)
    return out


def resize_mask(mask, size):
    """Nearest-neighbor resize; preserves the {0, 1} value set."""
    h, w = (size, size) if np.isscalar(size) else size
    out = cv2.resize(np.asarray(mask, dtype=np.uint8), (int(w), int(h)),
                     interpolation=cv2.INTER_NEAREST)
    return out


def normalize(img, cfg: PreprocessConfig):
    """Unit domain -> per-channel standardized: (v - mean_c) / std_c."""
    mean = np.asarray(cfg.channel_mean, dtype=np.float32)
    std = np.asarray(cfg.channel_std, dtype=np.float32)
    return (np.asarray(img, dtype=np.float32) - mean) / std


def denormalize(img, cfg: PreprocessConfig):
    """Inverse of :func:`normalize`: v * std_c + mean_c."""
    mean = np.asarray(cfg.channel_mean, dtype=np.float32)
    std = np.asarray(cfg.channel_std, dtype=np.float32)
    return np.asarray(img, dtype=np.float32) * std + mean


def normalize_batch(t: torch.Tensor, cfg: PreprocessConfig) -> torch.Tensor:
    """Standardize an N x 3 x H x W tensor in the unit domain."""
    mean = torch.tensor(cfg.channel_mean, dtype=t.dtype, device=t.device).view(1, 3, 1, 1)
    std = torch.tensor(cfg.channel_std, dtype=t.dtype, device=t.device).view(1, 3, 1, 1)
    return (t - mean) / std


def to_batch_tensor(images) -> torch.Tensor:
    """Stack H x W x 3 arrays into an N x 3 x H x W float tensor."""
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def _grayscale(img):
    return img @ _LUMA


def adjust_saturation(img, factor):
    """Blend each pixel with its own gray value; factor 1 is the identity."""
    gray = _grayscale(img)[..., None]
    return factor * img + (1.0 - factor) * gray


def adjust_brightness(img, factor):
    return img * factor


def adjust_contrast(img, factor):
    """Blend with the image's mean gray level; factor 1 is the identity."""
    mean = float(_grayscale(img).mean())
    return factor * img + (1.0 - factor) * mean


def augment(image, factors, seed):
    """Seeded color jitter: saturation, brightness, contrast, in that order.

    Each factor is drawn independently from U[1 - f, 1 + f]. The result is
    clamped back into the unit domain. Zero factors reproduce the input
    bit for bit.
    """
    factors = tuple(factors)
    if len(factors) != 3 or any(not (0 <= f < 1) for f in factors):
        raise InvalidConfigError(f"jitter factors must lie in [0, 1), got {factors}")
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"augment expects (H, W, 3), got {img.shape}")
    if all(f == 0 for f in factors):
        return img.copy()
    rng = np.random.default_rng(seed)
    draws = [rng.uniform(1.0 - f, 1.0 + f) for f in factors]
    out = adjust_saturation(img, draws[0])
    out = adjust_brightness(out, draws[1])
    out = adjust_contrast(out, draws[2])
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def preprocess_unit_image(img, cfg: PreprocessConfig, apply_normalize=True):
    """Resize a unit-domain image to the target square and optionally normalize."""
    out = resize_image(img, cfg.target_size)
    out = np.clip(out, 0.0, 1.0)
    if apply_normalize:
        out = normalize(out, cfg)
    return out


def load_and_preprocess(record, cfg: PreprocessConfig, augment_seed=None,
                        apply_normalize=True):
    """Decode, optionally jitter, resize and standardize one record.

    Returns ``(image, mask_or_None, label)`` where the image is
    target_size x target_size x 3 (normalized unless ``apply_normalize``
    is False) and the mask, when present, is nearest-resized to the same
    grid. Jitter runs only when the config enables it *and* a seed is
    provided, so evaluation paths can share the training config.
    """
    img = decode_image(record.image_path)
    if cfg.augment_enabled and augment_seed is not None:
        img = augment(img, cfg.augment_factors, augment_seed)
    img = preprocess_unit_image(img, cfg, apply_normalize=apply_normalize)

    mask = None
    if record.mask_path is not None:
        mask = resize_mask(decode_mask(record.mask_path), cfg.target_size)
    return img, mask, record.label
