"""Multi-run experiments and run-artifact writers."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import replace
from pathlib import Path

from .config import TrainConfig
from .data_io import PairedDataset
from .evaluation import SweepRow, evaluate_model, mean_distorted_bleu, robustness_sweep_model
from .text_codec import build_vocabulary
from .training import pretrain_codec, train_full

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "split", "text_loss", "image_mse", "embedding_mse", "ssim", "total", "psnr_db", "bleu",
               "bleu_teacher_forced")
SWEEP_COLUMNS = ("kind", "severity", "mse", "ssim", "psnr_db", "bleu", "n")


def write_history_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, LOG_COLUMNS, restval="", lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items() if k in LOG_COLUMNS})


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r.kind, repr(r.severity), *r.report.csv_row()])


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_arm(cfg: TrainConfig, data: PairedDataset, grids: dict, target=None) -> dict:
    """Pretrain, train the full network, then evaluate clean and under distortion."""
    vocab = build_vocabulary(data.sentences)
    pre = pretrain_codec(cfg, data.sentences, vocab)
    full = train_full(cfg, data, pre.best, target=target)
    model = full.best.build_model()
    clean = evaluate_model(model, data, vocab, cfg.strength)
    rows = robustness_sweep_model(model, data, vocab, grids, cfg.seed, cfg.strength)
    return {
        "config": cfg.to_dict(),
        "clean": clean.to_dict(),
        "sweep": [r.to_dict() for r in rows],
        "mean_distorted_bleu": mean_distorted_bleu(rows),
        "full_epochs_run": max(h["epoch"] for h in full.history),
    }


def ablation_noise_pretraining(cfg: TrainConfig, data: PairedDataset, grids: dict | None = None, target=None) -> dict:
    """Run the pipeline twice, with and without embedding noise in pretraining.

    The two arms share every setting, including the seed, except the noise flag.
    """
    grids = grids if grids is not None else cfg.grids
    arms = {}
    for name, flag in (("with_noise", True), ("without_noise", False)):
        log.info("ablation arm %s (seed %d)", name, cfg.seed)
        arms[name] = run_arm(replace(cfg, embedding_noise=flag), data, grids, target)
    return {
        "seed": cfg.seed,
        "arms": arms,
        "noise_helps": arms["with_noise"]["mean_distorted_bleu"] >= arms["without_noise"]["mean_distorted_bleu"],
    }
