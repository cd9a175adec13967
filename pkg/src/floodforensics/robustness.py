"""Image-processing attacks applied to test images before preprocessing.

Every operator maps a unit-domain float image to a unit-domain float image
and is deterministic given its parameters (and seed, for the noise attack).
Attacks run at the image's native resolution; the standard resize/normalize
pipeline comes afterwards.
"""

import io
import json
from dataclasses import dataclass, field

import cv2
import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d as _correlate1d
from scipy.ndimage import median_filter as _scipy_median

from .errors import InvalidConfigError
from .validation import check_unit_image

ATTACK_NAMES = ("jpeg", "resize_down", "median", "gaussian_blur", "gaussian_noise", "none")

_DEFAULT_PARAMS = {
    "jpeg": {"quality": 50},
    "resize_down": {"factor": 0.5},
    "median": {"window": 3},
    "gaussian_blur": {"window": 3, "sigma": 0.8},
    "gaussian_noise": {"mean": 0.0, "variance": 0.003},
    "none": {},
}


@dataclass(frozen=True)
class AttackSpec:
    name: str = "none"
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.name not in ATTACK_NAMES:
            raise InvalidConfigError(f"unknown attack {self.name!r}, expected one of {ATTACK_NAMES}")
        merged = dict(_DEFAULT_PARAMS[self.name])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise InvalidConfigError(f"unknown parameter(s) for {self.name}: {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)

    def to_json(self):
        return json.dumps({"name": self.name, "params": self.params, "seed": self.seed})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        extra = set(d) - {"name", "params", "seed"}
        if extra:
            raise InvalidConfigError(f"unknown attack spec key(s): {sorted(extra)}")
        return cls(name=d.get("name", "none"), params=d.get("params", {}), seed=d.get("seed", 0))

    def tag(self):
        """Short human-readable identifier, e.g. ``jpeg_q50``."""
        if self.name == "none":
            return "none"
        parts = [f"{k[0]}{v:g}" if isinstance(v, (int, float)) else str(v)
                 for k, v in sorted(self.params.items())]
        return f"{self.name}_" + "_".join(parts)


def jpeg_compress(image, quality):
    """Round-trip through a baseline JPEG encoder (4:2:0 chroma subsampling)."""
    if not (1 <= int(quality) <= 100):
        raise InvalidConfigError(f"JPEG quality must be in [1, 100], got {quality}")
    img = check_unit_image(image)
    as_u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(as_u8).save(buf, format="JPEG", quality=int(quality), subsampling=2)
    buf.seek(0)
    back = np.asarray(Image.open(buf).convert("RGB"), dtype=np.float32)
    return back / 255.0


def resize_down(image, factor):
    """Bilinear downsample to (floor(f*H), floor(f*W))."""
    if not (0 < factor <= 1):
        raise InvalidConfigError(f"resize factor must be in (0, 1], got {factor}")
    img = check_unit_image(image)
    h, w = img.shape[:2]
    nh, nw = int(np.floor(factor * h)), int(np.floor(factor * w))
    if nh < 1 or nw < 1:
        raise InvalidConfigError(f"resize factor {factor} collapses {h}x{w} to zero size")
    if (nh, nw) == (h, w):
        return img.copy()
    out = cv2.resize(img, (nw, nh), interpolation=cv2.INTER_LINEAR)
    return np.clip(out, 0.0, 1.0)


def median_filter(image, window):
    """Per-channel median with reflect padding at the borders."""
    window = int(window)
    if window < 3 or window % 2 == 0:
        raise InvalidConfigError(f"median window must be odd and >= 3, got {window}")
    img = check_unit_image(image)
    out = np.empty_like(img)
    for c in range(3):
        # scipy's 'mirror' mode equals np.pad reflect padding
        out[:, :, c] = _scipy_median(img[:, :, c], size=window, mode="mirror")
    return out


def gaussian_kernel_1d(window, sigma):
    """Normalized 1-D Gaussian kernel truncated to the given window."""
    window = int(window)
    if window < 1 or window % 2 == 0:
        raise InvalidConfigError(f"blur window must be odd, got {window}")
    if sigma <= 0:
        raise InvalidConfigError(f"blur sigma must be positive, got {sigma}")
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, window, sigma=0.8):
    """Separable Gaussian convolution with reflect padding."""
    img = check_unit_image(image).astype(np.float64)
    k = gaussian_kernel_1d(window, sigma)
    out = np.empty_like(img)
    for c in range(3):
        # 'mirror' mode equals np.pad reflect padding; the kernel is
        # symmetric so correlation and convolution coincide
        tmp = _correlate1d(img[:, :, c], k, axis=0, mode="mirror")
        out[:, :, c] = _correlate1d(tmp, k, axis=1, mode="mirror")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def gaussian_noise(image, mean, variance, seed):
    """Additive i.i.d. Gaussian noise, clamped back into [0, 1]."""
    if variance < 0:
        raise InvalidConfigError(f"noise variance must be nonnegative, got {variance}")
    img = check_unit_image(image)
    if variance == 0 and mean == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    noise = rng.normal(mean, np.sqrt(variance), size=img.shape)
    return np.clip(img + noise, 0.0, 1.0).astype(np.float32)


def apply_attack(spec: AttackSpec, image, image_index=0):
    """Dispatch to the named operator; ``none`` is the identity.

    The noise attack derives its per-image seed from (spec.seed, image_index)
    so batched evaluation stays deterministic and order-independent.
    """
    p = spec.params
    if spec.name == "none":
        return np.asarray(image, dtype=np.float32).copy()
    if spec.name == "jpeg":
        return jpeg_compress(image, p["quality"])
    if spec.name == "resize_down":
        return resize_down(image, p["factor"])
    if spec.name == "median":
        return median_filter(image, p["window"])
    if spec.name == "gaussian_blur":
        return gaussian_blur(image, p["window"], p["sigma"])
    if spec.name == "gaussian_noise":
        seed = np.random.SeedSequence([int(spec.seed), int(image_index)])
        return gaussian_noise(image, p["mean"], p["variance"], seed)
    raise InvalidConfigError(f"unknown attack {spec.name!r}")
