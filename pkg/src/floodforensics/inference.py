"""Batch inference over manifest records and report assembly."""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidConfigError
from .metrics import EvalReport, report_from_scores
from .networks import HybridNet, prepare_baseline_input
from .preprocess import (
    PreprocessConfig,
    decode_image,
    decode_mask,
    normalize_batch,
    preprocess_unit_image,
    resize_mask,
    to_batch_tensor,
)
from .robustness import AttackSpec, apply_attack


@dataclass
class InferenceResult:
    scores: np.ndarray           # (N,)
    labels: np.ndarray           # (N,)
    maps: list | None            # per-image (H, W) float maps, hybrid only
    gt_masks: list               # per-image uint8 masks or None


@torch.no_grad()
def score_records(model, records, pp_cfg: PreprocessConfig, *, variant="hybrid",
                  attack: AttackSpec = None, batch_size=16, device="cpu"):
    """Score manifest records, optionally attacking each image first.

    Attacks run on the decoded native-resolution image before the standard
    resize/normalize preprocessing. Masks are never attacked.
    """
    model.eval()
    model.to(device)
    records = list(records)
    scores, labels, maps, gt_masks = [], [], [], []
    hybrid = isinstance(model, HybridNet)
    # the model itself knows its conditioning; the argument is a fallback
    variant = "hybrid" if hybrid else getattr(model, "kind", variant)

    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        unit_imgs, chunk_masks = [], []
        for offset, rec in enumerate(chunk):
            img = decode_image(rec.image_path)
            if attack is not None and attack.name != "none":
                img = apply_attack(attack, img, image_index=start + offset)
            unit_imgs.append(preprocess_unit_image(img, pp_cfg, apply_normalize=False))
            mask = None
            if rec.mask_path is not None:
                mask = resize_mask(decode_mask(rec.mask_path), pp_cfg.target_size)
            chunk_masks.append(mask)
            labels.append(rec.label)
            gt_masks.append(mask)

        unit = to_batch_tensor(unit_imgs).to(device)
        if hybrid:
            batch_scores, batch_maps = model(normalize_batch(unit, pp_cfg))
            maps.extend(m.cpu().numpy() for m in batch_maps)
        elif variant == "plain":
            batch_scores = model(normalize_batch(unit, pp_cfg))
        else:
            size = pp_cfg.target_size
            filled = [
                m if m is not None else np.zeros((size, size), np.uint8)
                for m in chunk_masks
            ]
            mask_t = torch.from_numpy(np.stack(filled).astype(np.float32)).to(device)
            if variant == "mul":
                x = prepare_baseline_input("mul", unit, mask_t, pp_cfg)
            elif variant == "cat":
                x = prepare_baseline_input("cat", normalize_batch(unit, pp_cfg), mask_t, pp_cfg)
            else:
                raise InvalidConfigError(f"unknown variant {variant!r}")
            batch_scores = model(x)
        scores.extend(float(s) for s in batch_scores)

    return InferenceResult(
        scores=np.array(scores, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64),
        maps=maps if hybrid else None,
        gt_masks=gt_masks,
    )


def evaluate(model, records, pp_cfg: PreprocessConfig, *, variant="hybrid",
             attack: AttackSpec = None, real_records=None, model_tag="model",
             dataset_tag="dataset", decision_threshold=0.5, mask_threshold=0.5,
             batch_size=16, device="cpu") -> EvalReport:
    """Run the full evaluation protocol on one dataset.

    ``real_records`` supplies the paired real set whose scores complete the
    ROC when ``records`` holds only manipulated images. Localization maps are
    binarized at ``mask_threshold`` before bPA/IoU.
    """
    res = score_records(
        model, records, pp_cfg, variant=variant, attack=attack,
        batch_size=batch_size, device=device,
    )
    extra_real = None
    if real_records is not None:
        paired = score_records(
            model, real_records, pp_cfg, variant=variant, attack=attack,
            batch_size=batch_size, device=device,
        )
        extra_real = paired.scores[paired.labels == 0]

    metadata = {}
    if attack is not None and attack.name == "jpeg":
        metadata["jpeg_encoder"] = "libjpeg baseline, 4:2:0 chroma subsampling"
    return report_from_scores(
        res.scores,
        res.labels,
        model_tag=model_tag,
        dataset_tag=dataset_tag,
        pred_masks=res.maps,
        gt_masks=res.gt_masks,
        attack=None if attack is None else {"name": attack.name, "params": attack.params,
                                            "seed": attack.seed},
        extra_real_scores=extra_real,
        decision_threshold=decision_threshold,
        mask_threshold=mask_threshold,
        metadata=metadata,
    )
