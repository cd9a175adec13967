"""Input validation helpers for arrays flowing through the public API.

All helpers return contiguous float32/uint8 numpy arrays so downstream torch
conversions are cheap and predictable.
"""

import numpy as np

from .errors import InvalidConfigError, ShapeError

# tolerance for values that drift out of [0, 1] through float round trips
_UNIT_ATOL = 1e-6


def check_unit_image(img, name="image"):
    """Validate a single H x W x 3 image with values in [0, 1]."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} has empty spatial dims: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidConfigError(f"{name} contains non-finite values")
    if arr.min() < -_UNIT_ATOL or arr.max() > 1 + _UNIT_ATOL:
        raise InvalidConfigError(
            f"{name} must lie in [0, 1], got range [{arr.min():.4g}, {arr.max():.4g}]"
        )
    return np.clip(arr, 0.0, 1.0)


def check_image_batch(X, name="X", size_multiple=None):
    """Validate a batch of unit-domain images, shape (N, H, W, 3).

    A single image is promoted to a batch of one. ``size_multiple`` enforces
    that H and W are divisible by the backbone stride.
    """
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ShapeError(f"{name} must have shape (N, H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ShapeError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidConfigError(f"{name} contains non-finite values")
    if arr.min() < -_UNIT_ATOL or arr.max() > 1 + _UNIT_ATOL:
        raise InvalidConfigError(
            f"{name} must lie in [0, 1], got range [{arr.min():.4g}, {arr.max():.4g}]"
        )
    if size_multiple is not None:
        h, w = arr.shape[1], arr.shape[2]
        if h % size_multiple or w % size_multiple:
            raise InvalidConfigError(
                f"{name} spatial dims {h}x{w} must be divisible by {size_multiple}"
            )
    return np.ascontiguousarray(np.clip(arr, 0.0, 1.0))


def check_binary_mask(mask, shape=None, name="mask"):
    """Validate a single H x W binary mask; returns uint8 with values {0, 1}."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must have shape (H, W), got {arr.shape}")
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0, 1))):
        raise InvalidConfigError(f"{name} must be binary, found values {vals[:8]}")
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise ShapeError(f"{name} shape {arr.shape} does not match expected {tuple(shape)}")
    return arr.astype(np.uint8)


def check_mask_batch(masks, shape=None, name="masks"):
    """Validate a batch of binary masks, shape (N, H, W)."""
    arr = np.asarray(masks)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"{name} must have shape (N, H, W), got {arr.shape}")
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0, 1))):
        raise InvalidConfigError(f"{name} must be binary, found values {vals[:8]}")
    if shape is not None and tuple(arr.shape[1:]) != tuple(shape):
        raise ShapeError(f"{name} spatial shape {arr.shape[1:]} does not match {tuple(shape)}")
    return arr.astype(np.uint8)


def check_labels(y, n=None, name="y"):
    """Validate binary labels; returns int64 array of 0/1."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0, 1))):
        raise InvalidConfigError(f"{name} must contain only 0/1, found {vals[:8]}")
    if n is not None and arr.shape[0] != n:
        raise ShapeError(f"{name} has {arr.shape[0]} entries, expected {n}")
    return arr.astype(np.int64)
