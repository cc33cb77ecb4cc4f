"""Report writers: delimited outputs plus matplotlib figures next to them.

Every CLI report path emits machine-readable CSV/PGM and a rendered figure:
training writes report.csv + loss_curve.png, adjacency export writes
adjacency CSV + PGM + a heatmap PNG, ablation writes a CSV + bar chart.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_report_csv(report, path) -> None:
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_metric,seconds\n")
        for epoch, loss, metric, seconds in report.epochs:
            f.write(f"{epoch},{loss:.17g},{metric:.17g},{seconds:.3f}\n")


def save_loss_curve(report, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    if report.epochs:
        epochs = [e for e, *_ in report.epochs]
        ax.plot(epochs, [l for _, l, *_ in report.epochs], label="train loss")
        metrics = [m for _, _, m, _ in report.epochs]
        if not all(np.isnan(metrics)):
            ax2 = ax.twinx()
            ax2.plot(epochs, metrics, color="tab:orange", label="val metric")
            ax2.set_ylabel("val metric")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss")
    ax.set_title(f"seed {report.seed}  config {report.config_hash}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# adjacency export


def write_adjacency_csv(a: np.ndarray, path) -> None:
    with open(path, "w") as f:
        for row in a:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")


def write_pgm(a: np.ndarray, path) -> None:
    """8-bit binary PGM; values in [0, 1] scale linearly to 0..255."""
    pixels = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def save_adjacency_png(a: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(a, cmap="viridis", vmin=0.0, interpolation="nearest")
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_xlabel("node")
    ax.set_ylabel("node")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# ablation comparison


def write_ablation_csv(results, path) -> None:
    with open(path, "w") as f:
        f.write("variant,metric\n")
        for name, metric, _report in results:
            f.write(f"{name},{metric:.17g}\n")


def save_ablation_chart(results, path, task: str = "") -> None:
    names = [name for name, _, _ in results]
    values = [metric for _, metric, _ in results]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.0 + 0.8 * len(names)), 4))
    ax.bar(names, values, color="tab:blue")
    ax.set_ylabel("count MSE" if task == "count" else "accuracy")
    ax.set_title("ablation comparison")
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
