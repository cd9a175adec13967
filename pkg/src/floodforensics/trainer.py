"""Training loop: seeded mini-batch Adam optimization with checkpointing.

The same core loop serves disk-backed manifests (CLI path) and in-memory
arrays (estimator path) through two batch sources with a common interface.
Model selection keeps the checkpoint with minimum validation total loss,
ties broken by the earliest epoch.
"""

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import (
    CheckpointMismatchError,
    DivergenceError,
    InvalidConfigError,
    TrainConfigError,
)
from .losses import LossWeights, detection_loss, localization_loss, total_loss
from .manifest import SampleRecord
from .networks import (
    BackboneSpec,
    BaselineNet,
    HybridNet,
    build_baseline,
    build_hybrid,
    prepare_baseline_input,
)
from .preprocess import (
    PreprocessConfig,
    load_and_preprocess,
    normalize_batch,
    to_batch_tensor,
)

VARIANTS = ("hybrid", "plain", "cat", "mul")
CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-4
    batch_size: int = 16
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    device: str = "cpu"
    select: str = "best"  # "best" (min validation loss) or "final"
    real_mask_mode: str = "water"  # "water": use shipped masks; "zeros": force empty

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise InvalidConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer != "adam":
            raise InvalidConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.select not in ("best", "final"):
            raise InvalidConfigError(f"select must be 'best' or 'final', got {self.select!r}")
        if self.real_mask_mode not in ("water", "zeros"):
            raise InvalidConfigError(
                f"real_mask_mode must be 'water' or 'zeros', got {self.real_mask_mode!r}"
            )


@dataclass
class EpochStats:
    epoch: int
    train_det_loss: float
    train_loc_loss: float | None
    train_total_loss: float
    val_total_loss: float
    val_det_accuracy: float
    seconds: float

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


def _mask_or_zeros(mask, label, size, real_mask_mode):
    if mask is None or (real_mask_mode == "zeros" and label == 0):
        return np.zeros((size, size), dtype=np.uint8)
    return mask


def _derive_seed(*parts):
    return np.random.SeedSequence([int(p) for p in parts])


class RecordBatchSource:
    """Streams (input, labels, target_masks) batches from manifest records."""

    def __init__(self, records, pp_cfg: PreprocessConfig, variant, *, training,
                 base_seed=0, real_mask_mode="water"):
        self.records = list(records)
        self.pp_cfg = pp_cfg
        self.variant = variant
        self.training = training
        self.base_seed = base_seed
        self.real_mask_mode = real_mask_mode
        if variant in ("hybrid", "cat", "mul") and training:
            for r in self.records:
                if r.label == 1 and r.mask_path is None:
                    raise TrainConfigError(
                        f"variant {variant!r} needs masks for manipulated training images; "
                        f"missing for {r.image_path}"
                    )

    def __len__(self):
        return len(self.records)

    def _load(self, idx, epoch):
        rec = self.records[idx]
        aug_seed = (
            _derive_seed(self.base_seed, epoch, idx)
            if self.training and self.pp_cfg.augment_enabled
            else None
        )
        img, mask, label = load_and_preprocess(
            rec, self.pp_cfg, augment_seed=aug_seed, apply_normalize=False
        )
        mask = _mask_or_zeros(mask, label, self.pp_cfg.target_size, self.real_mask_mode)
        return img, mask, label

    def batches(self, epoch, batch_size, shuffle):
        order = np.arange(len(self.records))
        if shuffle:
            np.random.default_rng(_derive_seed(self.base_seed, epoch)).shuffle(order)
        for start in range(0, len(order), batch_size):
            idxs = order[start : start + batch_size]
            imgs, masks, labels = zip(*(self._load(i, epoch) for i in idxs))
            yield assemble_batch(imgs, masks, labels, self.variant, self.pp_cfg)


class ArrayBatchSource:
    """Same interface as RecordBatchSource over in-memory unit-domain arrays."""

    def __init__(self, X, y, masks=None, pp_cfg: PreprocessConfig = None,
                 variant="hybrid", *, training=False, base_seed=0,
                 real_mask_mode="water"):
        self.X = np.asarray(X, dtype=np.float32)
        self.y = np.asarray(y, dtype=np.int64)
        self.masks = masks
        self.pp_cfg = pp_cfg or PreprocessConfig(target_size=self.X.shape[1])
        self.variant = variant
        self.training = training
        self.base_seed = base_seed
        self.real_mask_mode = real_mask_mode

    def __len__(self):
        return self.X.shape[0]

    def _load(self, idx, epoch):
        from .preprocess import augment  # local import keeps module import light

        img = self.X[idx]
        if self.training and self.pp_cfg.augment_enabled:
            img = augment(img, self.pp_cfg.augment_factors,
                          _derive_seed(self.base_seed, epoch, idx))
        size = img.shape[0]
        mask = None if self.masks is None else self.masks[idx]
        mask = _mask_or_zeros(mask, int(self.y[idx]), size, self.real_mask_mode)
        return img, mask, int(self.y[idx])

    def batches(self, epoch, batch_size, shuffle):
        order = np.arange(len(self))
        if shuffle:
            np.random.default_rng(_derive_seed(self.base_seed, epoch)).shuffle(order)
        for start in range(0, len(order), batch_size):
            idxs = order[start : start + batch_size]
            imgs, masks, labels = zip(*(self._load(i, epoch) for i in idxs))
            yield assemble_batch(imgs, masks, labels, self.variant, self.pp_cfg)


def assemble_batch(unit_images, masks, labels, variant, pp_cfg):
    """Build the model input for one batch.

    Returns ``(x, labels, target_masks)``; ``target_masks`` is None for
    baseline variants, which train on the detection loss alone.
    """
    unit = to_batch_tensor(unit_images)
    label_t = torch.tensor(labels, dtype=torch.float32)
    mask_t = torch.from_numpy(np.stack(masks).astype(np.float32))
    if variant == "hybrid":
        return normalize_batch(unit, pp_cfg), label_t, mask_t
    if variant == "plain":
        return normalize_batch(unit, pp_cfg), label_t, None
    if variant == "mul":
        x = prepare_baseline_input("mul", unit, mask_t, pp_cfg)
        return x, label_t, None
    if variant == "cat":
        x = prepare_baseline_input("cat", normalize_batch(unit, pp_cfg), mask_t, pp_cfg)
        return x, label_t, None
    raise InvalidConfigError(f"unknown variant {variant!r}")


def compute_batch_losses(model, x, labels, target_masks, weights: LossWeights):
    """Forward one batch and return (scores, det_loss, loc_loss_or_None, total).

    With ``lambda_loc == 0`` the localization branch is detached from the
    graph, so its parameters receive no gradient and the detection trajectory
    matches a plain baseline trained on the same stream.
    """
    if isinstance(model, HybridNet):
        detach = weights.lambda_loc == 0
        scores, maps = model(x, detach_localization=detach)
        l_det = detection_loss(scores, labels)
        l_loc = localization_loss(maps, target_masks)
        total = total_loss(l_det, l_loc, weights)
        return scores, l_det, l_loc, total
    scores = model(x)
    l_det = detection_loss(scores, labels)
    return scores, l_det, None, l_det


@torch.no_grad()
def _validate(model, source, cfg):
    model.eval()
    total_sum, det_correct, n = 0.0, 0, 0
    for x, labels, masks in source.batches(epoch=0, batch_size=cfg.batch_size, shuffle=False):
        x = x.to(cfg.device)
        labels = labels.to(cfg.device)
        masks = masks.to(cfg.device) if masks is not None else None
        scores, _, _, total = compute_batch_losses(model, x, labels, masks, cfg.loss_weights)
        b = labels.shape[0]
        total_sum += float(total) * b
        det_correct += int(((scores >= 0.5).float() == labels).sum())
        n += b
    model.train()
    return total_sum / n, det_correct / n


@dataclass
class TrainResult:
    best_epoch: int
    best_val_loss: float
    state_dict: dict
    meta: dict
    checkpoint_path: Path | None = None


def run_training(model, train_source, val_source, cfg: TrainConfig, *,
                 meta=None, run_dir=None, prior_history=None, optimizer_state=None,
                 start_epoch=1, log_fn=None):
    """Epoch loop shared by the record-based and array-based entry points."""
    if len(train_source) == 0:
        raise TrainConfigError("training set is empty")
    if len(val_source) == 0:
        raise TrainConfigError("validation set is empty")

    torch.manual_seed(cfg.seed)
    device = cfg.device
    model.to(device)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps
    )
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)

    meta = dict(meta or {})
    history = list(prior_history or [])
    ckpt_dir = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        ckpt_dir = run_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def _ckpt_path(epoch):
        return None if ckpt_dir is None else ckpt_dir / f"epoch_{epoch:03d}.pt"

    best = None  # (val_loss, epoch, state_dict copy)
    for h in history:  # resumed runs keep their earlier best
        if best is None or h.val_total_loss < best[0]:
            best = (h.val_total_loss, h.epoch, None)

    model.train()
    for epoch in range(start_epoch, cfg.epochs + 1):
        t0 = time.perf_counter()
        det_sum = loc_sum = tot_sum = 0.0
        n_seen = 0
        for step, (x, labels, masks) in enumerate(
            train_source.batches(epoch, cfg.batch_size, shuffle=True)
        ):
            x = x.to(device)
            labels = labels.to(device)
            masks = masks.to(device) if masks is not None else None
            _, l_det, l_loc, total = compute_batch_losses(
                model, x, labels, masks, cfg.loss_weights
            )
            if not torch.isfinite(total):
                raise DivergenceError(epoch, step, total.item())
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            optimizer.step()

            b = labels.shape[0]
            det_sum += l_det.item() * b
            loc_sum += l_loc.item() * b if l_loc is not None else 0.0
            tot_sum += total.item() * b
            n_seen += b

        val_loss, val_acc = _validate(model, val_source, cfg)
        stats = EpochStats(
            epoch=epoch,
            train_det_loss=det_sum / n_seen,
            train_loc_loss=(loc_sum / n_seen) if isinstance(model, HybridNet) else None,
            train_total_loss=tot_sum / n_seen,
            val_total_loss=val_loss,
            val_det_accuracy=val_acc,
            seconds=time.perf_counter() - t0,
        )
        history.append(stats)
        if log_fn is not None:
            log_fn(stats)

        state_copy = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
        epoch_meta = dict(meta, epoch=epoch, val_total_loss=val_loss)
        if ckpt_dir is not None:
            save_checkpoint(state_copy, epoch_meta, _ckpt_path(epoch), optimizer=optimizer)
        if run_dir is not None:
            with open(run_dir / "history.jsonl", "a", encoding="utf-8") as fh:
                fh.write(stats.to_json() + "\n")

        if best is None or val_loss < best[0]:
            best = (val_loss, epoch, state_copy)

    if cfg.select == "final":
        best_epoch = history[-1].epoch
        best_loss = history[-1].val_total_loss
        best_state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
    else:
        best_loss, best_epoch, best_state = best
        if best_state is None:
            # best epoch predates a resume; its state only exists on disk
            payload = torch.load(_ckpt_path(best_epoch), map_location="cpu",
                                 weights_only=False)
            best_state = payload["state_dict"]

    result_meta = dict(meta, epoch=best_epoch, val_total_loss=best_loss)
    best_path = None
    if run_dir is not None:
        best_path = Path(run_dir) / "best.pt"
        save_checkpoint(best_state, result_meta, best_path)

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(best_epoch, best_loss, best_state, result_meta, best_path), history


def train(model, train_records, val_records, cfg: TrainConfig,
          pp_cfg: PreprocessConfig = None, variant="hybrid", run_dir=None,
          meta=None, log_fn=None, resume=False):
    """Optimize ``model`` on manifest records under the standard recipe.

    Returns ``(TrainResult, history)``; the model is left holding the
    selected (best-validation by default) parameters.
    """
    if variant not in VARIANTS:
        raise InvalidConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    if not train_records:
        raise TrainConfigError("train_records is empty")
    if not val_records:
        raise TrainConfigError("val_records is empty")
    pp_cfg = pp_cfg or PreprocessConfig()

    train_source = RecordBatchSource(
        train_records, pp_cfg, variant, training=True,
        base_seed=cfg.seed, real_mask_mode=cfg.real_mask_mode,
    )
    val_source = RecordBatchSource(
        val_records, pp_cfg, variant, training=False,
        base_seed=cfg.seed, real_mask_mode=cfg.real_mask_mode,
    )

    start_epoch, prior_history, optimizer_state = 1, None, None
    if resume and run_dir is not None:
        resumed = _load_resume_state(model, Path(run_dir))
        if resumed is not None:
            start_epoch, prior_history, optimizer_state = resumed

    return run_training(
        model, train_source, val_source, cfg,
        meta=meta, run_dir=run_dir, prior_history=prior_history,
        optimizer_state=optimizer_state, start_epoch=start_epoch, log_fn=log_fn,
    )


def _load_resume_state(model, run_dir):
    ckpts = sorted((run_dir / "checkpoints").glob("epoch_*.pt")) if (run_dir / "checkpoints").is_dir() else []
    if not ckpts:
        return None
    payload = torch.load(ckpts[-1], map_location="cpu", weights_only=False)
    model.load_state_dict(payload["state_dict"])
    history = []
    hist_file = run_dir / "history.jsonl"
    if hist_file.exists():
        with open(hist_file, encoding="utf-8") as fh:
            history = [EpochStats.from_json(line) for line in fh if line.strip()]
    last_epoch = payload["meta"]["epoch"]
    history = [h for h in history if h.epoch <= last_epoch]
    return last_epoch + 1, history, payload.get("optimizer")


def select_best(history, checkpoints):
    """Pick the checkpoint with minimum validation loss; earliest epoch wins ties."""
    history = list(history)
    checkpoints = list(checkpoints)
    if not history:
        raise TrainConfigError("history is empty")
    if len(history) != len(checkpoints):
        raise InvalidConfigError(
            f"{len(history)} history entries vs {len(checkpoints)} checkpoints"
        )
    losses = [h.val_total_loss for h in history]
    return checkpoints[int(np.argmin(losses))]


def build_model(variant, backbone: BackboneSpec, head_channels=256):
    """Construct the model for a variant name ('hybrid' or a baseline kind)."""
    if variant == "hybrid":
        return build_hybrid(backbone, head_channels=head_channels)
    return build_baseline(variant, backbone)


def make_meta(variant, backbone: BackboneSpec, head_channels, weights: LossWeights,
              pp_cfg: PreprocessConfig, model_tag=None):
    """Metadata header stored inside checkpoints and their JSON sidecars."""
    spec = backbone.resolved()
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "variant": variant,
        "backbone_family": spec.family,
        "output_stride": spec.output_stride,
        "feature_channels": spec.feature_channels,
        "head_channels": head_channels,
        "lambda_det": weights.lambda_det,
        "lambda_loc": weights.lambda_loc,
        "model_tag": model_tag or f"{variant}_{spec.family}",
        "preprocess": {
            "target_size": pp_cfg.target_size,
            "channel_mean": list(pp_cfg.channel_mean),
            "channel_std": list(pp_cfg.channel_std),
            "augment_factors": list(pp_cfg.augment_factors),
            "augment_enabled": pp_cfg.augment_enabled,
        },
    }


def save_checkpoint(state_dict, meta, path, optimizer=None):
    """Write the parameter archive plus a JSON sidecar of the metadata.

    The archive itself carries no timestamps; wall-clock provenance lives
    only in the sidecar so reruns stay byte-identical.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"state_dict": state_dict, "meta": dict(meta)}
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    # the zipfile serializer embeds a random serialization id; the legacy
    # format is byte-deterministic, which the rerun-idempotence contract needs
    torch.save(payload, path, _use_new_zipfile_serialization=False)
    sidecar = dict(meta, created_at=time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    with open(path.with_suffix(".meta.json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return path


def load_checkpoint(path, device="cpu"):
    """Rebuild the model described by a checkpoint's metadata and load it.

    Returns ``(model, meta, preprocess_config)``. Raises
    CheckpointMismatchError when the archive does not fit the architecture
    its metadata describes.
    """
    path = Path(path)
    try:
        payload = torch.load(path, map_location=device, weights_only=False)
    except (OSError, RuntimeError) as e:
        raise CheckpointMismatchError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or "state_dict" not in payload or "meta" not in payload:
        raise CheckpointMismatchError(f"{path} is not a recognized checkpoint archive")
    meta = payload["meta"]
    try:
        spec = BackboneSpec(
            family=meta["backbone_family"],
            output_stride=meta["output_stride"],
            feature_channels=meta["feature_channels"],
        )
        model = build_model(meta["variant"], spec, head_channels=meta.get("head_channels", 256))
        pp = meta["preprocess"]
        pp_cfg = PreprocessConfig(
            target_size=pp["target_size"],
            channel_mean=tuple(pp["channel_mean"]),
            channel_std=tuple(pp["channel_std"]),
            augment_factors=tuple(pp["augment_factors"]),
            augment_enabled=pp["augment_enabled"],
        )
    except (KeyError, InvalidConfigError) as e:
        raise CheckpointMismatchError(f"{path} has unusable metadata: {e}") from e
    try:
        model.load_state_dict(payload["state_dict"], strict=True)
    except RuntimeError as e:
        raise CheckpointMismatchError(f"{path} does not match its declared architecture: {e}") from e
    model.to(device)
    model.eval()
    return model, meta, pp_cfg
