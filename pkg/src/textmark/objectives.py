"""Loss terms and quality metrics.

Image arguments are ``(B, C, H, W)`` or ``(C, H, W)`` tensors in [0, 1].
SSIM rescales to [0, 255] so the stabilizers use ``L = 255`` directly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 255.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5


class NonFiniteError(ValueError):
    pass


@dataclass
class LossWeights:
    text: float = 0.8
    image: float = 3.0
    embedding: float = 0.5
    ssim: float = 0.01

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be non-negative, got {v}")


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def text_loss(logits: torch.Tensor, target: torch.Tensor, pad_id: int | None = None) -> torch.Tensor:
    """Cross-entropy summed over positions, averaged over the batch.

    PAD positions count unless ``pad_id`` is given, in which case they are
    masked out.
    """
    if logits.dim() == 2:
        logits, target = logits.unsqueeze(0), target.unsqueeze(0)
    if torch.isnan(logits).any():
        raise NonFiniteError("NaN in logits")
    b, n, c = logits.shape
    nll = F.cross_entropy(logits.reshape(b * n, c), target.reshape(b * n), reduction="none").view(b, n)
    if pad_id is not None:
        nll = nll * (target != pad_id).to(nll.dtype)
    return nll.sum(dim=1).mean()


def image_mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape(a, b)
    return ((a - b) ** 2).mean()


def embedding_mse(z: torch.Tensor, z_hat: torch.Tensor) -> torch.Tensor:
    _same_shape(z, z_hat)
    return ((z - z_hat) ** 2).mean()


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    r = (size - 1) / 2
    g = torch.exp(-((torch.arange(size, dtype=torch.float64) - r) ** 2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    return x.unsqueeze(0) if x.dim() == 3 else x


def ssim(a: torch.Tensor, b: torch.Tensor, win_size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Mean local SSIM, Gaussian-weighted, per channel then averaged.

    Only windows lying fully inside the image contribute.
    """
    _same_shape(a, b)
    a, b = _as_batch(a) * SSIM_RANGE, _as_batch(b) * SSIM_RANGE
    ch = a.shape[1]
    w = gaussian_window(win_size, sigma, a.dtype).to(a.device).expand(ch, 1, win_size, win_size)

    def filt(x):
        return F.conv2d(x, w, groups=ch)

    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def ssim_global(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """SSIM with a single window covering each whole channel."""
    _same_shape(a, b)
    a, b = _as_batch(a) * SSIM_RANGE, _as_batch(b) * SSIM_RANGE
    dims = (2, 3)
    mu_a, mu_b = a.mean(dims), b.mean(dims)
    var_a = (a * a).mean(dims) - mu_a * mu_a
    var_b = (b * b).mean(dims) - mu_b * mu_b
    cov = (a * b).mean(dims) - mu_a * mu_b
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    s = (2 * mu_a * mu_b + c1) * (2 * cov + c2) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return s.mean()


def total_loss(text, img_mse, emb_mse, ssim_val, w: LossWeights):
    return w.text * text + w.image * img_mse + w.embedding * emb_mse - w.ssim * ssim_val


def psnr_from_mse(mse: float, max_val: float = 1.0) -> float:
    if mse < 0:
        raise ValueError("mse must be non-negative")
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


def psnr(a: torch.Tensor, b: torch.Tensor, max_val: float = 1.0) -> float:
    return psnr_from_mse(float(image_mse(a.double(), b.double())), max_val)


# -- BLEU ---------------------------------------------------------------------


def _strip(seq, pad_ids) -> list:
    ids = seq.ids if hasattr(seq, "ids") else seq
    return [int(t) if not isinstance(t, str) else t for t in ids if t not in pad_ids]


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def _bleu_stats(cand: Sequence, ref: Sequence, max_n: int):
    matches, totals = [], []
    for n in range(1, max_n + 1):
        c, r = _ngrams(cand, n), _ngrams(ref, n)
        matches.append(sum(min(k, r[g]) for g, k in c.items()))
        totals.append(max(len(cand) - n + 1, 0))
    return matches, totals


def _combine(matches, totals, cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        # add-one smoothing only where the n-gram match count is zero
        p = m / t if m > 0 else 1.0 / (t + 1)
        log_p += math.log(p)
    log_p /= len(matches)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def bleu(
    candidates: Sequence,
    references: Sequence,
    max_n: int = 4,
    pad_ids: Sequence = (0,),
    mode: str = "corpus",
) -> float:
    """BLEU-4 with uniform weights and a brevity penalty.

    ``mode="corpus"`` pools n-gram counts over all pairs; ``mode="sentence"``
    averages per-pair scores.  Items may be token-id lists, ``TokenSequence``
    objects, or word lists.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    if not candidates:
        raise ValueError("BLEU of an empty corpus is undefined")
    pads = set(pad_ids)
    pairs = [(_strip(c, pads), _strip(r, pads)) for c, r in zip(candidates, references)]
    if mode == "sentence":
        return sum(_combine(*_bleu_stats(c, r, max_n), len(c), len(r)) for c, r in pairs) / len(pairs)
    if mode != "corpus":
        raise ValueError(f"unknown BLEU mode {mode!r}")
    matches, totals = [0] * max_n, [0] * max_n
    cand_len = ref_len = 0
    for c, r in pairs:
        m, t = _bleu_stats(c, r, max_n)
        matches = [x + y for x, y in zip(matches, m)]
        totals = [x + y for x, y in zip(totals, t)]
        cand_len += len(c)
        ref_len += len(r)
    return _combine(matches, totals, cand_len, ref_len)


# -- reporting ----------------------------------------------------------------

REPORT_KEYS = ("mse", "ssim", "psnr_db", "bleu", "n")


@dataclass
class MetricsReport:
    mse: float
    ssim: float
    psnr_db: float
    bleu: float
    n: int

    def to_dict(self) -> dict:
        # JSON has no infinity; identical images are written as the string "inf"
        d = asdict(self)
        if math.isinf(d["psnr_db"]):
            d["psnr_db"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(float(d["mse"]), float(d["ssim"]), float(d["psnr_db"]), float(d["bleu"]), int(d["n"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self) -> list[str]:
        return [repr(float(v)) if k != "n" else str(v) for k, v in asdict(self).items()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_KEYS)
        w.writerow(self.csv_row())
        return buf.getvalue()
