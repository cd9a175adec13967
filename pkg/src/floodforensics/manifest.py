"""Dataset manifests: record type, directory scanning, splitting, JSONL I/O.

A manifest is a JSON-lines file with one record per line. Image and mask
paths are stored relative to the manifest's own directory so a dataset tree
can be moved as a unit.
"""

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InvalidConfigError, ManifestEmptyError, SplitTooSmallError

SOURCES = ("RWFI", "WSOC", "StreetG", "WebG132", "WebG504", "synthetic")
SPLITS = ("train", "val", "test")
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class SampleRecord:
    """One dataset entry: an image, its real/fake label and optional flood mask."""

    image_path: str
    label: int
    mask_path: str | None = None
    source: str = "synthetic"
    split: str = "test"

    def __post_init__(self):
        if self.label not in (0, 1):
            raise InvalidConfigError(f"label must be 0 or 1, got {self.label!r}")
        if self.source not in SOURCES:
            raise InvalidConfigError(f"unknown source {self.source!r}, expected one of {SOURCES}")
        if self.split not in SPLITS:
            raise InvalidConfigError(f"unknown split {self.split!r}, expected one of {SPLITS}")


def _is_decodable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (UnidentifiedImageError, OSError, SyntaxError):
        return False


def build_manifest(image_dir, label, mask_dir=None, source="synthetic"):
    """Scan a directory of images into records, pairing masks by filename stem.

    Returns ``(records, skipped)`` where ``skipped`` lists undecodable files.
    Records are sorted by filename so downstream seeded operations are
    reproducible. Raises ManifestEmptyError when no decodable image is found.
    """
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        raise ManifestEmptyError(f"image directory does not exist: {image_dir}")

    masks_by_stem = {}
    if mask_dir is not None:
        mask_dir = Path(mask_dir)
        if not mask_dir.is_dir():
            raise InvalidConfigError(f"mask directory does not exist: {mask_dir}")
        for p in sorted(mask_dir.iterdir()):
            if p.suffix.lower() == ".png":
                masks_by_stem.setdefault(p.stem, p)

    records, skipped = [], []
    for p in sorted(image_dir.iterdir(), key=lambda q: q.name):
        if p.suffix.lower() not in IMAGE_EXTENSIONS or not p.is_file():
            continue
        if not _is_decodable(p):
            skipped.append(str(p))
            continue
        mask = masks_by_stem.get(p.stem)
        records.append(
            SampleRecord(
                image_path=str(p),
                label=int(label),
                mask_path=str(mask) if mask is not None else None,
                source=source,
            )
        )
    if not records:
        raise ManifestEmptyError(f"no decodable images in {image_dir}")
    return records, skipped


def split_manifest(records, train_fraction=0.8, seed=0):
    """Deterministic stratified train/val split.

    |train| = floor(train_fraction * N); per-class counts are assigned by
    largest remainder so class ratios match the input within one sample.
    """
    if not 0 < train_fraction < 1:
        raise InvalidConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    records = list(records)
    n = len(records)
    by_class = {}
    for i, r in enumerate(records):
        by_class.setdefault(r.label, []).append(i)
    for label, idxs in by_class.items():
        if len(idxs) < 2:
            raise SplitTooSmallError(
                f"class {label} has only {len(idxs)} record(s); need at least 2 to split"
            )

    n_train = int(np.floor(train_fraction * n))
    labels = sorted(by_class)
    floors = {c: int(np.floor(train_fraction * len(by_class[c]))) for c in labels}
    remainders = {c: train_fraction * len(by_class[c]) - floors[c] for c in labels}
    short = n_train - sum(floors.values())
    # hand the leftover slots to the classes with the largest remainders
    for c in sorted(labels, key=lambda c: (-remainders[c], c))[:short]:
        floors[c] += 1

    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for c in labels:
        idxs = np.array(by_class[c])
        rng.shuffle(idxs)
        train_idx.extend(idxs[: floors[c]].tolist())
        val_idx.extend(idxs[floors[c] :].tolist())

    train = [dataclasses.replace(records[i], split="train") for i in sorted(train_idx)]
    val = [dataclasses.replace(records[i], split="val") for i in sorted(val_idx)]
    return train, val


def save_manifest(records, path):
    """Write records as JSONL with paths relative to the manifest directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()

    def rel(p):
        if p is None:
            return None
        return os.path.relpath(Path(p).resolve(), base)

    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            row = {
                "image_path": rel(r.image_path),
                "label": r.label,
                "mask_path": rel(r.mask_path),
                "source": r.source,
                "split": r.split,
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def load_manifest(path):
    """Read a JSONL manifest, resolving stored paths against its directory."""
    path = Path(path)
    base = path.parent.resolve()

    def absolute(p):
        if p is None:
            return None
        q = Path(p)
        return str(q if q.is_absolute() else base / q)

    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise InvalidConfigError(f"{path}:{line_no}: invalid JSON ({e})") from e
            records.append(
                SampleRecord(
                    image_path=absolute(row["image_path"]),
                    label=int(row["label"]),
                    mask_path=absolute(row.get("mask_path")),
                    source=row.get("source", "synthetic"),
                    split=row.get("split", "test"),
                )
            )
    if not records:
        raise ManifestEmptyError(f"manifest has no records: {path}")
    return records
