"""Line charts for training logs and robustness sweeps."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def plot_sweep(rows: list[dict], out) -> None:
    kinds = sorted({r["kind"] for r in rows})
    fig, axes = plt.subplots(1, len(kinds), figsize=(4 * len(kinds), 3.2), squeeze=False)
    for ax, kind in zip(axes[0], kinds):
        pts = sorted((float(r["severity"]), float(r["bleu"])) for r in rows if r["kind"] == kind)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o")
        ax.set_title(kind)
        ax.set_xlabel("severity")
        ax.set_ylabel("BLEU-4")
        ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(out, dpi=100)
    plt.close(fig)


def plot_history(rows: list[dict], out) -> None:
    metrics = [m for m in ("text_loss", "total", "ssim", "bleu") if any(_num(r.get(m)) is not None for r in rows)]
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.2), squeeze=False)
    for ax, m in zip(axes[0], metrics):
        for split in ("train", "val"):
            pts = [(int(r["epoch"]), _num(r.get(m))) for r in rows if r["split"] == split and _num(r.get(m)) is not None]
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], label=split)
        ax.set_title(m)
        ax.set_xlabel("epoch")
        ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=100)
    plt.close(fig)


def plot_csv(path, out) -> None:
    """Dispatch on the CSV header: sweep files have ``kind``, logs have ``epoch``."""
    rows = _read(path)
    if not rows:
        raise ValueError(f"{path} has no data rows")
    if "kind" in rows[0]:
        plot_sweep(rows, out)
    elif "epoch" in rows[0]:
        plot_history(rows, out)
    else:
        raise ValueError(f"{path} is neither a training log nor a sweep CSV")
    Path(out).stat()
