"""Evaluation report writer: JSON, delimited per-sample table, and figures.

The JSON report is the machine interface (per-sample metrics, aggregate
means, confusion counts and column-normalized percentage matrices). The CSV
mirrors the per-sample rows for spreadsheet use, and the figures render the
same content: one metrics-per-sample chart and one column-normalized
confusion heatmap per limb head.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .amputation import LIMB_ORDER

_CLASS_NAMES = ["intact", "level1", "level2", "level3"]


def aggregate_metrics(samples):
    """Mean of each metric over the per-sample dicts."""
    keys = ("mve_mm", "mpjpe_mm", "pa_mpjpe_mm")
    if not samples:
        return {k: 0.0 for k in keys}
    return {k: float(np.mean([s[k] for s in samples])) for k in keys}


def limb_confusion_counts(pred_labels, gt_labels):
    """Per-limb 4 x 4 confusion counts (rows true level, columns predicted)."""
    out = {}
    for i, limb in enumerate(LIMB_ORDER):
        cm = np.zeros((4, 4), dtype=np.int64)
        for pred, gt in zip(pred_labels, gt_labels):
            cm[gt.levels[i], pred.levels[i]] += 1
        out[limb] = cm
    return out


def build_report(samples, confusion):
    """Assemble the report dict from per-sample metrics and confusion stats.

    ``confusion`` maps limb name to (counts, ConfusionStats).
    """
    report = {
        "samples": samples,
        "aggregate": aggregate_metrics(samples),
        "confusion": {},
    }
    for limb, (counts, stats) in confusion.items():
        report["confusion"][limb] = {
            "counts": counts.tolist(),
            "column_percent": stats.column_percent.tolist(),
            "accuracy": stats.accuracy,
            "precision": stats.precision.tolist(),
            "recall": stats.recall.tolist(),
            "f1": stats.f1.tolist(),
            "macro_f1": stats.macro_f1,
        }
    return report


def write_report(report, out_dir, figures=True):
    """Write report.json, samples.csv, and (optionally) PNG figures.

    Returns the list of paths written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    json_path = out_dir / "report.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(json_path)

    csv_path = out_dir / "samples.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "image", "mve_mm", "mpjpe_mm", "pa_mpjpe_mm"])
        for i, s in enumerate(report["samples"]):
            writer.writerow([i, s.get("image", ""), repr(s["mve_mm"]),
                             repr(s["mpjpe_mm"]), repr(s["pa_mpjpe_mm"])])
    written.append(csv_path)

    if figures:
        written.extend(_write_figures(report, out_dir))
    return written


def _write_figures(report, out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    samples = report["samples"]
    if samples:
        idx = np.arange(len(samples))
        fig, ax = plt.subplots(figsize=(7.0, 4.0))
        for key, marker in (("mve_mm", "o"), ("mpjpe_mm", "s"), ("pa_mpjpe_mm", "^")):
            ax.plot(idx, [s[key] for s in samples], marker=marker, markersize=3,
                    linewidth=1.0, label=key.replace("_mm", "").upper())
        ax.set_xlabel("sample")
        ax.set_ylabel("error (mm)")
        ax.legend(loc="best", fontsize=8)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / "metrics_per_sample.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    if report["confusion"]:
        limbs = list(report["confusion"])
        fig, axes = plt.subplots(1, len(limbs), figsize=(3.2 * len(limbs), 3.4))
        if len(limbs) == 1:
            axes = [axes]
        for ax, limb in zip(axes, limbs):
            pct = np.asarray(report["confusion"][limb]["column_percent"])
            ax.imshow(pct, cmap="Blues", vmin=0.0, vmax=100.0)
            for r in range(pct.shape[0]):
                for c in range(pct.shape[1]):
                    ax.text(c, r, f"{pct[r, c]:.1f}", ha="center", va="center", fontsize=7)
            ax.set_title(limb, fontsize=9)
            ax.set_xticks(range(4), _CLASS_NAMES, rotation=45, fontsize=6)
            ax.set_yticks(range(4), _CLASS_NAMES, fontsize=6)
            ax.set_xlabel("predicted", fontsize=8)
            if limb == limbs[0]:
                ax.set_ylabel("true", fontsize=8)
        fig.tight_layout()
        path = out_dir / "confusion_matrices.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written
