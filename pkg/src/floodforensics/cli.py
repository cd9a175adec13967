"""Command-line surface: prepare, train, eval, report, explain, synth.

Exit codes: 0 success, 2 configuration/input error, 3 training divergence,
4 checkpoint/architecture mismatch. Relative manifest paths resolve against
$FLOODFORENSICS_DATA_ROOT when it is set, otherwise the working directory.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointMismatchError,
    ConfigError,
    DivergenceError,
    FloodForensicsError,
)
from .explain import cam_map, render_panel
from .inference import evaluate
from .losses import LossWeights
from .manifest import build_manifest, load_manifest, save_manifest, split_manifest
from .networks import BackboneSpec, HybridNet
from .preprocess import (
    PreprocessConfig,
    decode_image,
    decode_mask,
    normalize,
    preprocess_unit_image,
    resize_mask,
)
from .reporting import load_reports, render_bar_charts, render_table
from .robustness import AttackSpec
from .synthetic import generate_dataset
from .trainer import TrainConfig, build_model, load_checkpoint, make_meta, train

DATA_ROOT_ENV = "FLOODFORENSICS_DATA_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4


def resolve_data_path(path):
    """Resolve a possibly-relative manifest path against the data root."""
    p = Path(path)
    if p.is_absolute():
        return p
    root = os.environ.get(DATA_ROOT_ENV)
    return (Path(root) / p) if root else p


# -- run configuration ------------------------------------------------------

_SCHEMA = {
    "tag": None,
    "model": {"variant", "backbone", "output_stride", "feature_channels", "head_channels"},
    "preprocess": {"target_size", "channel_mean", "channel_std",
                   "augment_factors", "augment_enabled"},
    "train": {"epochs", "learning_rate", "batch_size", "seed",
              "lambda_det", "lambda_loc", "select", "real_mask_mode"},
    "data": {"train_manifest", "val_manifest", "manifest", "train_fraction", "split_seed"},
    "output_dir": None,
}


def _reject_unknown(doc):
    for key, sub in doc.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        allowed = _SCHEMA[key]
        if allowed is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"config key {key!r} must be an object")
        for k in sub:
            if k not in allowed:
                raise ConfigError(f"unknown config key: {key}.{k}")


def parse_run_config(path, seed_override=None):
    """Read and validate a training run configuration document."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(doc)
    if "data" not in doc or "output_dir" not in doc:
        raise ConfigError("config must define 'data' and 'output_dir'")

    model = doc.get("model", {})
    variant = model.get("variant", "hybrid")
    backbone = BackboneSpec(
        family=model.get("backbone", "residual50"),
        output_stride=model.get("output_stride"),
        feature_channels=model.get("feature_channels"),
    ).resolved()
    head_channels = model.get("head_channels", 256)

    pp = doc.get("preprocess", {})
    pp_cfg = PreprocessConfig(
        target_size=pp.get("target_size", 224),
        channel_mean=tuple(pp.get("channel_mean", PreprocessConfig().channel_mean)),
        channel_std=tuple(pp.get("channel_std", PreprocessConfig().channel_std)),
        augment_factors=tuple(pp.get("augment_factors", (0.05, 0.05, 0.05))),
        augment_enabled=pp.get("augment_enabled", True),
    )

    tr = doc.get("train", {})
    cfg = TrainConfig(
        epochs=tr.get("epochs", 30),
        learning_rate=tr.get("learning_rate", 1e-4),
        batch_size=tr.get("batch_size", 16),
        seed=seed_override if seed_override is not None else tr.get("seed", 0),
        loss_weights=LossWeights(tr.get("lambda_det", 0.4), tr.get("lambda_loc", 0.6)),
        select=tr.get("select", "best"),
        real_mask_mode=tr.get("real_mask_mode", "water"),
    )

    data = doc["data"]
    if "manifest" in data:
        if "train_manifest" in data or "val_manifest" in data:
            raise ConfigError("data: give either 'manifest' or train/val manifests, not both")
        manifest = resolve_data_path(data["manifest"])
        if not Path(manifest).exists():
            raise ConfigError(f"manifest not found: {manifest}")
        records = load_manifest(manifest)
        train_records, val_records = split_manifest(
            records,
            train_fraction=data.get("train_fraction", 0.8),
            seed=data.get("split_seed", 0),
        )
    else:
        for k in ("train_manifest", "val_manifest"):
            if k not in data:
                raise ConfigError(f"data must define '{k}' (or a single 'manifest')")
            if not Path(resolve_data_path(data[k])).exists():
                raise ConfigError(f"manifest not found: {resolve_data_path(data[k])}")
        train_records = load_manifest(resolve_data_path(data["train_manifest"]))
        val_records = load_manifest(resolve_data_path(data["val_manifest"]))

    tag = doc.get("tag") or f"{variant}_{backbone.family}"
    return {
        "doc": doc,
        "variant": variant,
        "backbone": backbone,
        "head_channels": head_channels,
        "pp_cfg": pp_cfg,
        "train_cfg": cfg,
        "train_records": train_records,
        "val_records": val_records,
        "output_dir": Path(doc["output_dir"]),
        "tag": tag,
    }


# -- subcommands -------------------------------------------------------------

def cmd_prepare(args):
    records, skipped = build_manifest(
        args.images, label=args.label, mask_dir=args.masks, source=args.source
    )
    save_manifest(records, args.out)
    for p in skipped:
        print(f"skipped undecodable file: {p}", file=sys.stderr)
    n_masks = sum(1 for r in records if r.mask_path is not None)
    print(f"wrote {len(records)} records ({n_masks} with masks) to {args.out}")
    return EXIT_OK


def _run_finished(run_dir, epochs):
    hist = run_dir / "history.jsonl"
    if not hist.exists() or not (run_dir / "best.pt").exists():
        return False
    lines = [ln for ln in hist.read_text(encoding="utf-8").splitlines() if ln.strip()]
    return len(lines) >= epochs


def cmd_train(args):
    rc = parse_run_config(args.config, seed_override=args.seed)
    run_dir = rc["output_dir"]
    cfg = rc["train_cfg"]

    if args.resume and _run_finished(run_dir, cfg.epochs):
        print(f"run already finished: {run_dir}")
        return EXIT_OK

    run_dir.mkdir(parents=True, exist_ok=True)
    if not args.resume:
        # fresh runs overwrite prior state so reruns stay byte-identical
        hist = run_dir / "history.jsonl"
        if hist.exists():
            hist.unlink()
        ckpt_dir = run_dir / "checkpoints"
        if ckpt_dir.is_dir():
            for p in ckpt_dir.iterdir():
                p.unlink()

    resolved = dict(rc["doc"])
    resolved.setdefault("train", {})
    resolved["train"] = {
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "lambda_det": cfg.loss_weights.lambda_det,
        "lambda_loc": cfg.loss_weights.lambda_loc,
        "select": cfg.select,
        "real_mask_mode": cfg.real_mask_mode,
    }
    (run_dir / "config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    import torch

    torch.manual_seed(cfg.seed)
    model = build_model(rc["variant"], rc["backbone"], head_channels=rc["head_channels"])
    meta = make_meta(rc["variant"], rc["backbone"], rc["head_channels"],
                     cfg.loss_weights, rc["pp_cfg"], model_tag=rc["tag"])

    def log_fn(stats):
        loc = f" loc={stats.train_loc_loss:.4f}" if stats.train_loc_loss is not None else ""
        print(
            f"epoch {stats.epoch:3d}: det={stats.train_det_loss:.4f}{loc} "
            f"total={stats.train_total_loss:.4f} val={stats.val_total_loss:.4f} "
            f"val_acc={stats.val_det_accuracy:.3f} ({stats.seconds:.1f}s)"
        )

    result, _ = train(
        model, rc["train_records"], rc["val_records"], cfg,
        pp_cfg=rc["pp_cfg"], variant=rc["variant"], run_dir=run_dir,
        meta=meta, log_fn=log_fn, resume=args.resume,
    )
    print(f"best epoch {result.best_epoch} (val loss {result.best_val_loss:.4f}) "
          f"-> {result.checkpoint_path}")
    return EXIT_OK


def _parse_attack(text):
    if text is None or text == "none":
        return None
    if text.startswith("@"):
        text = Path(text[1:]).read_text(encoding="utf-8")
    return AttackSpec.from_json(text)


def cmd_eval(args):
    model, meta, pp_cfg = load_checkpoint(args.checkpoint)
    attack = _parse_attack(args.attack)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    real_records = None
    if args.real_manifest:
        real_records = load_manifest(resolve_data_path(args.real_manifest))

    written = []
    for mpath in args.manifest:
        mpath = resolve_data_path(mpath)
        records = load_manifest(mpath)
        dataset_tag = Path(mpath).stem
        labels = {r.label for r in records}
        # pair all-fake datasets with the designated real set for the ROC
        paired = real_records if labels == {1} and real_records is not None else None
        report = evaluate(
            model, records, pp_cfg, variant=meta["variant"], attack=attack,
            real_records=paired, model_tag=meta.get("model_tag", "model"),
            dataset_tag=dataset_tag, batch_size=args.batch_size,
        )
        attack_tag = attack.tag() if attack is not None else "none"
        out_path = out_dir / f"{dataset_tag}__{report.model_tag}__{attack_tag}.json"
        out_path.write_text(report.to_json() + "\n", encoding="utf-8")
        written.append(out_path)
        shown = {k: v for k, v in report.to_dict().items()
                 if k in ("tnr", "tpr", "auc", "bpa", "iou")}
        pretty = ", ".join(f"{k}={100 * v:.1f}%" for k, v in sorted(shown.items()))
        print(f"{dataset_tag}: {pretty} ({report.n_images} images) -> {out_path}")
    return EXIT_OK


def cmd_report(args):
    reports = load_reports(args.reports)
    table = render_table(reports, fmt=args.format)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table, encoding="utf-8")
    print(f"wrote {out}")
    if args.plots:
        for p in render_bar_charts(reports, out.parent):
            print(f"wrote {p}")
    return EXIT_OK


def cmd_explain(args):
    model, meta, pp_cfg = load_checkpoint(args.checkpoint)
    records = load_manifest(resolve_data_path(args.manifest))
    n = args.n
    if n > len(records):
        print(f"requested {n} panels but manifest has {len(records)} records; "
              f"rendering all", file=sys.stderr)
        n = len(records)
    hybrid = isinstance(model, HybridNet)
    if not hybrid:
        print("checkpoint has no localization branch; panels omit the predicted mask",
              file=sys.stderr)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    import torch

    for rec in records[:n]:
        unit = preprocess_unit_image(decode_image(rec.image_path), pp_cfg,
                                     apply_normalize=False)
        normed = normalize(unit, pp_cfg)
        pred_mask = None
        if hybrid:
            with torch.no_grad():
                x = torch.from_numpy(normed).permute(2, 0, 1).unsqueeze(0)
                _, maps = model(x)
            pred_mask = (maps[0].numpy() >= 0.5).astype(np.uint8)
        heat = cam_map(model, normed)
        if rec.mask_path is not None:
            gt = resize_mask(decode_mask(rec.mask_path), pp_cfg.target_size)
        else:
            gt = np.zeros(unit.shape[:2], dtype=np.uint8)
        stem = Path(rec.image_path).stem
        out_path = out_dir / f"{stem}_{meta.get('model_tag', 'model')}_panel.png"
        render_panel(unit, gt, pred_mask, heat, out_path)
        print(f"wrote {out_path}")
    return EXIT_OK


def cmd_synth(args):
    dirs = generate_dataset(args.out, n_real=args.n_real, n_fake=args.n_fake,
                            size=args.size, seed=args.seed)
    print(f"wrote synthetic dataset under {args.out} "
          f"({args.n_real} real, {args.n_fake} fake, {args.size}px)")
    for k, v in dirs.items():
        print(f"  {k}: {v}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="floodforensics",
        description="Detection and localization of GAN-manipulated flood images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="scan an image directory into a JSONL manifest")
    p.add_argument("--images", required=True, help="directory of PNG/JPEG images")
    p.add_argument("--label", required=True, type=int, choices=(0, 1),
                   help="1 = GAN-manipulated, 0 = real")
    p.add_argument("--masks", default=None, help="directory of mask PNGs paired by stem")
    p.add_argument("--source", default="synthetic",
                   help="dataset source tag (RWFI, WSOC, StreetG, ...)")
    p.add_argument("--out", required=True, help="output manifest path")
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train a model from a JSON run configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--resume", action="store_true",
                   help="continue a partial run; finished runs are a no-op")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one or more manifests")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", action="append", required=True,
                   help="repeatable; one report is written per manifest")
    p.add_argument("--real-manifest", default=None,
                   help="real-image manifest paired with all-fake manifests for AUC")
    p.add_argument("--attack", default=None,
                   help="inline AttackSpec JSON, @file, or 'none'")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--out", required=True, help="directory for report JSON files")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="render report JSONs as a percentage table")
    p.add_argument("reports", nargs="+", help="EvalReport JSON files")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--plots", action="store_true", help="also write grouped bar charts")
    p.add_argument("--out", required=True, help="output table path")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("explain", help="render input/mask/CAM panels for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("-n", type=int, default=3, help="number of records to render")
    p.add_argument("--out", required=True, help="directory for panel PNGs")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("synth", help="generate a tiny synthetic dataset for smoke tests")
    p.add_argument("--out", required=True)
    p.add_argument("--n-real", type=int, default=8)
    p.add_argument("--n-fake", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointMismatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (FloodForensicsError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
