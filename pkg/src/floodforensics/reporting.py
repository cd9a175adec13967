"""Render evaluation reports as percentage tables and grouped bar charts."""

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError
from .metrics import EvalReport

METRIC_ORDER = ("tnr", "tpr", "auc", "bpa", "iou")
METRIC_LABELS = {"tnr": "TNR%", "tpr": "TPR%", "auc": "AUC%", "bpa": "bPA%", "iou": "IoU%"}


def load_reports(paths):
    reports = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            reports.append(EvalReport.from_dict(json.load(fh)))
    return reports


def _attack_key(report):
    if report.attack is None:
        return "none"
    params = ", ".join(f"{k}={v:g}" if isinstance(v, (int, float)) else f"{k}={v}"
                       for k, v in sorted(report.attack.get("params", {}).items()))
    name = report.attack.get("name", "none")
    return f"{name}({params})" if params else name


def _group_reports(reports):
    """{attack: {(model, dataset): report}}; duplicate keys are an error."""
    grouped = {}
    for r in reports:
        cell = grouped.setdefault(_attack_key(r), {})
        key = (r.model_tag, r.dataset_tag)
        if key in cell:
            raise ConfigError(
                f"conflicting duplicate report for model={key[0]!r}, "
                f"dataset={key[1]!r}, attack={_attack_key(r)!r}"
            )
        cell[key] = r
    return grouped


def _columns_for(cell):
    """Ordered (dataset, metric) columns covering every defined metric."""
    datasets = sorted({d for _, d in cell})
    columns = []
    for d in datasets:
        present = set()
        for (m, d2), r in cell.items():
            if d2 != d:
                continue
            present.update(k for k in METRIC_ORDER if getattr(r, k) is not None)
        columns.extend((d, k) for k in METRIC_ORDER if k in present)
    return columns


def _fmt(value):
    return "" if value is None else f"{100.0 * value:.1f}"


def render_table(reports, fmt="markdown"):
    """One table per attack: rows are models, columns are dataset metrics."""
    if fmt not in ("markdown", "csv"):
        raise ConfigError(f"unknown table format {fmt!r}")
    grouped = _group_reports(reports)
    chunks = []
    for attack in sorted(grouped, key=lambda a: (a != "none", a)):
        cell = grouped[attack]
        columns = _columns_for(cell)
        models = sorted({m for m, _ in cell})
        header = ["model"] + [f"{d} {METRIC_LABELS[k]}" for d, k in columns]
        rows = []
        for m in models:
            row = [m]
            for d, k in columns:
                r = cell.get((m, d))
                row.append(_fmt(getattr(r, k)) if r is not None else "")
            rows.append(row)

        if fmt == "markdown":
            lines = [f"### attack: {attack}", ""]
            lines.append("| " + " | ".join(header) + " |")
            lines.append("|" + "|".join("---" for _ in header) + "|")
            lines.extend("| " + " | ".join(row) + " |" for row in rows)
            chunks.append("\n".join(lines))
        else:
            buf = io.StringIO()
            writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
            writer.writerow(["attack"] + header)
            for row in rows:
                writer.writerow([attack] + row)
            chunks.append(buf.getvalue().rstrip("\n"))
    return "\n\n".join(chunks) + "\n"


def render_bar_charts(reports, out_dir):
    """Grouped TNR/TPR/AUC bars per attack, one PNG each; returns the paths."""
    grouped = _group_reports(reports)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for attack, cell in grouped.items():
        datasets = sorted({d for _, d in cell})
        models = sorted({m for m, _ in cell})
        metrics = [k for k in ("tnr", "tpr", "auc")
                   if any(getattr(r, k) is not None for r in cell.values())]
        if not metrics:
            continue
        fig, axes = plt.subplots(1, len(metrics), figsize=(4.5 * len(metrics), 3.5),
                                 squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            width = 0.8 / max(len(models), 1)
            xs = np.arange(len(datasets))
            for j, m in enumerate(models):
                vals = [
                    100.0 * v if (r := cell.get((m, d))) is not None
                    and (v := getattr(r, metric)) is not None else np.nan
                    for d in datasets
                ]
                ax.bar(xs + j * width, vals, width=width, label=m)
            ax.set_xticks(xs + 0.4 - width / 2)
            ax.set_xticklabels(datasets, rotation=20, ha="right", fontsize=8)
            ax.set_ylim(0, 105)
            ax.set_title(METRIC_LABELS[metric])
        axes[0][0].legend(fontsize=7)
        fig.suptitle(f"attack: {attack}")
        fig.tight_layout()
        safe = attack.replace("(", "_").replace(")", "").replace(", ", "_").replace("=", "")
        path = out_dir / f"robustness_{safe}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written
