"""Desk-scale synthetic data: textured images with planted flat regions.

Fake samples carry a rectangular flat-colored patch standing in for the
manipulated area; the patch doubles as the ground-truth mask. Real samples
are fully textured and ship without a mask. Patch corners snap to a small
grid so the region aligns with typical backbone strides.
"""

from pathlib import Path

import numpy as np
from PIL import Image


def textured_image(rng, size):
    """High-frequency colored texture, values within [0.1, 0.9]."""
    base = rng.uniform(0.3, 0.7, size=(size, size, 3))
    noise = rng.uniform(-0.25, 0.25, size=(size, size, 3))
    return np.clip(base + noise, 0.1, 0.9).astype(np.float32)


def plant_flat_region(img, rng, grid=4):
    """Overwrite a random rectangle with a constant color; returns (img, mask).

    The rectangle covers roughly 15-35% of the area and its corners are
    multiples of ``grid``.
    """
    size = img.shape[0]
    lo, hi = max(grid, int(0.4 * size)), int(0.6 * size)
    h = int(rng.integers(lo // grid, hi // grid + 1)) * grid
    w = int(rng.integers(lo // grid, hi // grid + 1)) * grid
    top = int(rng.integers(0, (size - h) // grid + 1)) * grid
    left = int(rng.integers(0, (size - w) // grid + 1)) * grid
    color = rng.uniform(0.25, 0.75, size=3).astype(np.float32)
    out = img.copy()
    out[top : top + h, left : left + w] = color
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[top : top + h, left : left + w] = 1
    return out, mask


def save_unit_image(img, path):
    Image.fromarray(np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)).save(path)


def save_mask(mask, path):
    Image.fromarray((np.asarray(mask, dtype=np.uint8) * 255)).save(path)


def generate_dataset(out_dir, n_real=8, n_fake=8, size=64, seed=0):
    """Write a tiny real/fake dataset to disk.

    Layout: ``real/``, ``fake/``, ``fake_masks/`` (masks paired by stem).
    Returns a dict with the three directory paths.
    """
    out_dir = Path(out_dir)
    real_dir = out_dir / "real"
    fake_dir = out_dir / "fake"
    mask_dir = out_dir / "fake_masks"
    for d in (real_dir, fake_dir, mask_dir):
        d.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    for i in range(n_real):
        save_unit_image(textured_image(rng, size), real_dir / f"real_{i:03d}.png")
    for i in range(n_fake):
        img, mask = plant_flat_region(textured_image(rng, size), rng)
        save_unit_image(img, fake_dir / f"fake_{i:03d}.png")
        save_mask(mask, mask_dir / f"fake_{i:03d}.png")
    return {"real_dir": real_dir, "fake_dir": fake_dir, "mask_dir": mask_dir}
