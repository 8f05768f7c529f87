"""Report rendering: delimited tables, aligned text tables, and figure files.

Every report is CSV-first; each CSV gets a sidecar ``<name>.meta.json`` with
the effective run configuration and tool version (kept out of the CSV itself
so row counts and byte-identity stay stable). Figures are rendered with the
matplotlib Agg backend next to the delimited output.
"""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .geometry import MEASURE_NAMES


def write_meta(path, config: dict) -> None:
    """Sidecar with the effective config and tool version for an output file."""
    meta = {"tool": "tractshape", "version": __version__, "config": config}
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def text_table(header, rows) -> str:
    """Aligned fixed-width rendering of a small table."""
    cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for ri, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if ri == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def metrics_rows(report) -> list:
    rows = [[m.measure, _fmt(m.r), _fmt(m.nmse), m.note] for m in report.rows]
    avg = report.averages()
    rows.append(["average",
                 f"{avg['r_mean']:.6g} ± {avg['r_std']:.3g}",
                 f"{avg['nmse_mean']:.6g} ± {avg['nmse_std']:.3g}", ""])
    return rows


def save_metrics_report(report, csv_path, config: dict) -> None:
    write_csv(csv_path, ["measure", "pearson_r", "nmse", "note"],
              [[m.measure, _fmt(m.r), _fmt(m.nmse), m.note] for m in report.rows])
    write_meta(csv_path, config)
    with open(str(csv_path).replace(".csv", ".txt"), "w", encoding="utf-8") as f:
        f.write(text_table(["measure", "r", "nmse", "note"], metrics_rows(report)))


def save_history_csv(history, csv_path, config: dict) -> None:
    write_csv(csv_path, ["epoch", "lr", "mean_l1", "mean_l2", "mean_lsf", "mean_total"],
              [[h["epoch"], _fmt(h["lr"]), _fmt(h["l1"]), _fmt(h["l2"]),
                _fmt(h["lsf"]), _fmt(h["total"])] for h in history])
    write_meta(csv_path, config)


# --- figures ------------------------------------------------------------------


def plot_history(history, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    epochs = [h["epoch"] for h in history]
    for key, label in (("l1", "L1"), ("l2", "L2"), ("lsf", "L_SF"), ("total", "total")):
        ax.plot(epochs, [h[key] for h in history], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_pred_vs_truth(preds: np.ndarray, gts: np.ndarray, path) -> None:
    """5-panel scatter of predicted vs oracle values, one panel per measure."""
    fig, axes = plt.subplots(1, 5, figsize=(18, 3.6))
    for j, (ax, name) in enumerate(zip(axes, MEASURE_NAMES)):
        ax.scatter(gts[:, j], preds[:, j], s=6, alpha=0.5)
        lo = min(gts[:, j].min(), preds[:, j].min())
        hi = max(gts[:, j].max(), preds[:, j].max())
        ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
        ax.set_title(name)
        ax.set_xlabel("oracle")
        if j == 0:
            ax.set_ylabel("predicted")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(results, path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    names = [r.method for r in results]
    means = [r.mean_ms for r in results]
    stds = [r.std_ms for r in results]
    axes[0].bar(names, means, yerr=stds, capsize=4)
    axes[0].set_ylabel("per-cluster runtime (ms)")
    axes[0].set_title("mean inference runtime")
    for r in results:
        ns = [p[1] for p in r.per_cluster]
        ms = [p[2] for p in r.per_cluster]
        axes[1].scatter(ns, ms, s=8, alpha=0.6, label=r.method)
    axes[1].set_xlabel("streamlines per cluster")
    axes[1].set_ylabel("mean runtime (ms)")
    axes[1].set_yscale("log")
    axes[1].legend()
    axes[1].set_title("runtime vs bundle size")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_downstream(results, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar([r.feature_source for r in results], [r.r for r in results])
    ax.set_ylabel("held-out Pearson r")
    ax.set_title("score prediction by feature source")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
