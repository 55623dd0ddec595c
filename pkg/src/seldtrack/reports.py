"""Report artifacts: delimited loss/metric tables plus rendered figures.

Training and evaluation write their numbers as CSV/JSON and render matching
matplotlib figures next to them, so a run directory is self-describing.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

LOSS_COLUMNS = ("epoch", "lr", "sed", "ead", "doa", "tpit")


def write_losses_csv(epoch_rows: list[dict], path) -> Path:
    """Per-epoch loss table: epoch, lr, L_SED, L_EAD, L_DoA, L_tPIT."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
        for row in epoch_rows:
            writer.writerow([row[c] for c in LOSS_COLUMNS])
    return path


def plot_loss_curves(epoch_rows: list[dict], path) -> Path:
    path = Path(path)
    epochs = [r["epoch"] for r in epoch_rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, label in (("tpit", "PIT total"), ("sed", "SED"), ("ead", "EAD"), ("doa", "DoA")):
        ax.plot(epochs, [r[key] for r in epoch_rows], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss per frame")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_per_file_metrics_csv(per_file: dict[str, dict], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "er", "f", "le_deg", "lr"])
        for name in sorted(per_file):
            m = per_file[name]
            writer.writerow(
                [name, m["er_le_threshold"], m["f_le_threshold"], m["le_cd_deg"], m["lr_cd"]]
            )
    return path


def plot_metrics_summary(report: dict, path, threshold_deg: float = 20.0) -> Path:
    """Bar chart of the four joint metrics (LE rescaled onto [0, 1] by 180)."""
    path = Path(path)
    le = report["le_cd_deg"]
    lr = report["lr_cd"]
    values = [
        min(report["er_le_threshold"], 1.0),
        report["f_le_threshold"],
        (le / 180.0) if le is not None else 0.0,
        lr if lr is not None else 0.0,
    ]
    labels = [
        f"ER<={threshold_deg:.0f}",
        f"F<={threshold_deg:.0f}",
        "LE/180" + ("" if le is not None else " (n/a)"),
        "LR" + ("" if lr is not None else " (n/a)"),
    ]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(labels, values, color=["#c44", "#4a4", "#c84", "#47c"])
    for bar, value in zip(bars, values):
        ax.annotate(
            f"{value:.3f}",
            (bar.get_x() + bar.get_width() / 2, bar.get_height()),
            ha="center", va="bottom", fontsize=9,
        )
    ax.set_ylim(0, 1.15)
    ax.set_ylabel("score")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
