"""Detection metrics (TPR, TNR, AUC) and localization metrics (bPA, IoU).

Dataset-level localization numbers are means of per-image values, never
pooled-pixel counts. All metrics are fractions in [0, 1]; report rendering
multiplies by 100 for display.
"""

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import MetricUndefinedError, ShapeError
from .validation import check_binary_mask


def threshold_decision(score, threshold=0.5):
    """1 iff score >= threshold."""
    return int(score >= threshold)


def auc(pos_scores, neg_scores):
    """Area under the ROC curve as the exact Mann-Whitney statistic.

    Equivalent to averaging, over all (positive, negative) pairs, 1 when the
    positive outscores the negative, 0.5 on ties and 0 otherwise.
    """
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise MetricUndefinedError("AUC needs at least one score per class")
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def pixel_confusion(pred, gt):
    """Counts p[i][j] = pixels of true class i predicted as class j."""
    pred = check_binary_mask(pred, name="pred")
    gt = check_binary_mask(gt, shape=pred.shape, name="gt")
    p = np.zeros((2, 2), dtype=np.int64)
    for i in (0, 1):
        sel = gt == i
        p[i, 1] = int((pred[sel] == 1).sum())
        p[i, 0] = int(sel.sum()) - p[i, 1]
    return p


def balanced_pixel_accuracy(pred, gt):
    """Per-image balanced pixel accuracy.

    Mean of the per-class accuracies p_ii / (p_i0 + p_i1); classes absent
    from the ground truth are dropped from the average.
    """
    p = pixel_confusion(pred, gt)
    accs = [p[i, i] / (p[i, 0] + p[i, 1]) for i in (0, 1) if p[i, 0] + p[i, 1] > 0]
    return float(np.mean(accs))


def iou(pred, gt):
    """Intersection over union of the positive-pixel sets; 1.0 when both empty."""
    pred = check_binary_mask(pred, name="pred")
    gt = check_binary_mask(gt, shape=pred.shape, name="gt")
    inter = int(np.logical_and(pred == 1, gt == 1).sum())
    union = int(np.logical_or(pred == 1, gt == 1).sum())
    if union == 0:
        return 1.0
    return float(inter / union)


def mean_over_images(metric_fn, preds, gts):
    """Dataset aggregate: mean of the per-image metric."""
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if len(preds) == 0:
        raise MetricUndefinedError("no images to aggregate")
    return float(np.mean([metric_fn(p, g) for p, g in zip(preds, gts)]))


@dataclass
class EvalReport:
    """Per-dataset evaluation results; undefined metrics stay None."""

    model_tag: str
    dataset_tag: str
    attack: dict | None = None
    tnr: float | None = None
    tpr: float | None = None
    auc: float | None = None
    bpa: float | None = None
    iou: float | None = None
    n_images: int = 0
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        d = dataclasses.asdict(self)
        # omit undefined metrics rather than writing zero
        for k in ("tnr", "tpr", "auc", "bpa", "iou"):
            if d[k] is None:
                del d[k]
        if d["attack"] is None:
            del d["attack"]
        return d

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def report_from_scores(
    scores,
    labels,
    *,
    model_tag,
    dataset_tag,
    pred_masks=None,
    gt_masks=None,
    attack=None,
    extra_real_scores=None,
    decision_threshold=0.5,
    mask_threshold=0.5,
    metadata=None,
) -> EvalReport:
    """Assemble an EvalReport from raw scores/maps.

    Only metrics defined for the dataset's label composition are filled:
    TPR needs fakes, TNR needs reals, AUC needs both (``extra_real_scores``
    supplies the paired real set when the dataset itself is all-fake), and
    bPA/IoU need localization maps plus ground-truth masks.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"scores {scores.shape} vs labels {labels.shape}")

    decisions = scores >= decision_threshold
    report = EvalReport(
        model_tag=model_tag,
        dataset_tag=dataset_tag,
        attack=attack,
        n_images=int(scores.size),
        metadata=dict(metadata or {}),
    )
    report.metadata.setdefault("decision_threshold", decision_threshold)

    fake = labels == 1
    real = labels == 0
    if fake.any():
        report.tpr = float(decisions[fake].mean())
    if real.any():
        report.tnr = float(1.0 - decisions[real].mean())

    pos = scores[fake]
    neg = scores[real]
    if extra_real_scores is not None and len(extra_real_scores) > 0:
        neg = np.concatenate([neg, np.asarray(extra_real_scores, dtype=np.float64).ravel()])
    if pos.size > 0 and neg.size > 0:
        report.auc = auc(pos, neg)

    if pred_masks is not None and gt_masks is not None and len(gt_masks) > 0:
        pairs = [
            ((np.asarray(pm) >= mask_threshold).astype(np.uint8), gm)
            for pm, gm in zip(pred_masks, gt_masks)
            if gm is not None
        ]
        if pairs:
            preds = [p for p, _ in pairs]
            gts = [g for _, g in pairs]
            report.bpa = mean_over_images(balanced_pixel_accuracy, preds, gts)
            report.iou = mean_over_images(iou, preds, gts)
            report.metadata.setdefault("mask_threshold", mask_threshold)
            report.metadata.setdefault("mask_eval_size", list(np.asarray(gts[0]).shape))
    return report
