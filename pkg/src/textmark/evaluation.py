"""Clean evaluation and robustness sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .data_io import PairedDataset, quantize
from .objectives import MetricsReport, bleu, image_mse, psnr_from_mse, ssim
from .perturb import ImageDistortionSpec, distort_image
from .text_codec import Vocabulary, tokenize_batch

EVAL_BATCH = 32


def _chunks(n: int, size: int = EVAL_BATCH):
    for i in range(0, n, size):
        yield slice(i, min(i + size, n))


def image_metrics(covers: torch.Tensor, marked: torch.Tensor) -> tuple[float, float, float]:
    """Per-image MSE, SSIM and PSNR, each averaged over the set."""
    mses, ssims, psnrs = [], [], []
    for c, m in zip(covers.double(), marked.double()):
        mse = float(image_mse(c, m))
        mses.append(mse)
        ssims.append(float(ssim(c, m)))
        psnrs.append(psnr_from_mse(mse))
    # any identical pair makes the mean PSNR the +inf sentinel
    return float(np.mean(mses)), float(np.mean(ssims)), float(np.mean(psnrs))


@torch.no_grad()
def embed_dataset(model, data: PairedDataset, vocab: Vocabulary, strength=None, through_png: bool = True):
    tokens = tokenize_batch(data.sentences, vocab)
    covers = data.image_batch()
    marked = torch.cat([model.embed(covers[s], tokens[s], strength) for s in _chunks(len(data))])
    if through_png:
        marked = quantize(marked)
    return covers, marked, tokens


@torch.no_grad()
def decode_marked(model, marked: torch.Tensor) -> torch.Tensor:
    return torch.cat([model.extract(marked[s])[0] for s in _chunks(len(marked))])


@torch.no_grad()
def evaluate_model(model, data: PairedDataset, vocab: Vocabulary, strength=None, through_png: bool = True,
                   return_extra: bool = False, bleu_mode: str = "corpus"):
    """Embed, extract and greedy-decode every pair.

    ``through_png`` quantizes marked images to 8 bits before extraction.
    """
    if len(data) == 0:
        raise ValueError("evaluation dataset is empty")
    was_training = model.training
    model.eval()
    covers, marked, tokens = embed_dataset(model, data, vocab, strength, through_png)
    decoded = decode_marked(model, marked)
    score = bleu(decoded.tolist(), tokens.tolist(), mode=bleu_mode)
    mse, ssim_val, psnr_db = image_metrics(covers, marked)
    report = MetricsReport(mse, ssim_val, psnr_db, score, len(data))
    model.train(was_training)
    if not return_extra:
        return report
    tf = torch.cat([
        model.codec.decode_teacher_forced(model.extractor(marked[s]), tokens[s]).argmax(-1)
        for s in _chunks(len(data))
    ])
    return report, {
        "bleu_teacher_forced": bleu(tf.tolist(), tokens.tolist(), mode=bleu_mode),
        "decoded": decoded,
        "marked": marked,
        "covers": covers,
        "tokens": tokens,
    }


def evaluate(ckpt, data: PairedDataset, strength=None, through_png: bool = True) -> MetricsReport:
    model = ckpt.build_model()
    return evaluate_model(model, data, ckpt.vocab, strength, through_png)


@dataclass
class SweepRow:
    kind: str
    severity: float
    report: MetricsReport

    def to_dict(self) -> dict:
        return {"kind": self.kind, "severity": self.severity, **self.report.to_dict()}


@torch.no_grad()
def robustness_sweep_model(model, data: PairedDataset, vocab: Vocabulary, grids: dict, seed: int = 0,
                           strength=None, through_png: bool = True) -> list[SweepRow]:
    """BLEU of the decoded watermark after each (kind, severity) distortion.

    Image metrics in every row compare cover and (undistorted) marked images,
    so they stay constant across the sweep.
    """
    if len(data) == 0:
        raise ValueError("evaluation dataset is empty")
    model.eval()
    covers, marked, tokens = embed_dataset(model, data, vocab, strength, through_png)
    mse, ssim_val, psnr_db = image_metrics(covers, marked)
    rows = []
    for kind, severities in grids.items():
        for sev in severities:
            attacked = distort_image(marked, ImageDistortionSpec(kind, float(sev), seed))
            decoded = decode_marked(model, attacked)
            score = bleu(decoded.tolist(), tokens.tolist())
            rows.append(SweepRow(kind, float(sev), MetricsReport(mse, ssim_val, psnr_db, score, len(data))))
    return rows


def robustness_sweep(ckpt, data: PairedDataset, grids: dict | None = None, strength=None,
                     through_png: bool = True) -> list[SweepRow]:
    grids = grids if grids is not None else ckpt.config.grids
    return robustness_sweep_model(ckpt.build_model(), data, ckpt.vocab, grids, ckpt.config.seed, strength, through_png)


def mean_distorted_bleu(rows: list[SweepRow]) -> float:
    """Average BLEU over rows with non-zero severity."""
    vals = [r.report.bleu for r in rows if r.severity != 0]
    return float(np.mean(vals)) if vals else math.nan
