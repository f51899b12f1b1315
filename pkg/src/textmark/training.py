"""Two-phase training: codec pretraining, then the full network."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, CheckpointError, snapshot
from .config import TrainConfig
from .data_io import PairedDataset
from .evaluation import evaluate_model
from .model import WatermarkModel, codec_config
from .objectives import NonFiniteError, bleu, embedding_mse, image_mse, ssim, text_loss, total_loss
from .perturb import apply_embedding_noise, sample_noise_kind
from .text_codec import TextCodec, Vocabulary, tokenize_batch

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list[dict]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def _check_finite(value: torch.Tensor, what: str, epoch: int) -> None:
    if not torch.isfinite(value):
        raise TrainingDiverged(f"{what} became {value.item()} at epoch {epoch}")


def _adam(groups, cfg: TrainConfig):
    return torch.optim.Adam(groups, betas=(0.9, 0.999), eps=1e-8)


def _pad_id(cfg: TrainConfig, vocab: Vocabulary):
    return vocab.pad_id if cfg.mask_pad else None


def pretrain_codec(
    cfg: TrainConfig,
    sentences: Sequence[str],
    vocab: Vocabulary,
    val_sentences: Sequence[str] | None = None,
) -> TrainResult:
    """Train the text autoencoder alone, with optional embedding noise.

    Validation defaults to the training sentences.
    """
    if not sentences:
        raise ValueError("pretraining corpus is empty")
    cfg = replace(cfg, phase="pretrain_codec")
    torch.manual_seed(cfg.seed)
    codec = TextCodec(codec_config(cfg, len(vocab)))
    opt = _adam([{"params": codec.parameters(), "lr": cfg.lr_codec_pretrain}], cfg)
    data_rng = np.random.default_rng(cfg.seed)
    noise_rng = np.random.default_rng(cfg.seed + 1)
    tokens = tokenize_batch(sentences, vocab)
    val_tokens = tokenize_batch(val_sentences, vocab) if val_sentences else tokens
    pad = _pad_id(cfg, vocab)

    history: list[dict] = []
    best_key, best_params = None, None
    for epoch in range(1, cfg.pretrain_epochs + 1):
        codec.train()
        losses = []
        for idx in _batches(len(tokens), cfg.batch_size, data_rng):
            batch = tokens[idx]
            z = codec.encode(batch)
            if cfg.embedding_noise:
                z = apply_embedding_noise(z, sample_noise_kind(noise_rng, cfg.noise_identity_weight))
            try:
                loss = text_loss(codec.decode_teacher_forced(z, batch), batch, pad)
            except NonFiniteError as e:
                raise TrainingDiverged(f"{e} at epoch {epoch}") from e
            _check_finite(loss, "text loss", epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        row = {"epoch": epoch, "split": "train", "text_loss": float(np.mean(losses))}
        history.append(row)
        if epoch % cfg.eval_every == 0 or epoch == cfg.pretrain_epochs:
            codec.eval()
            with torch.no_grad():
                z = codec.encode(val_tokens)
                logits = codec.decode_teacher_forced(z, val_tokens)
                vloss = text_loss(logits, val_tokens, pad).item()
                tf_bleu = bleu(logits.argmax(-1).tolist(), val_tokens.tolist())
                g_bleu = bleu(codec.decode_greedy(z).tolist(), val_tokens.tolist())
            history.append({"epoch": epoch, "split": "val", "text_loss": vloss, "bleu": g_bleu, "bleu_teacher_forced": tf_bleu})
            log.info("pretrain epoch %d loss %.4f val %.4f bleu %.4f", epoch, row["text_loss"], vloss, g_bleu)
            key = (g_bleu, -vloss)
            if best_key is None or key > best_key:
                best_key, best_params = key, snapshot(codec, "codec.")
    last = Checkpoint("pretrain_codec", snapshot(codec, "codec."), vocab, cfg, history)
    best = Checkpoint("pretrain_codec", best_params, vocab, cfg, history)
    return TrainResult(best, last, history)


def full_losses(model: WatermarkModel, covers: torch.Tensor, tokens: torch.Tensor, cfg: TrainConfig, pad_id=None) -> dict:
    """All loss components of one teacher-forced pass, plus their weighted total."""
    z, marked, z_hat, logits = model(covers, tokens, cfg.strength)
    parts = {
        "text_loss": text_loss(logits, tokens, pad_id),
        "image_mse": image_mse(covers, marked),
        "embedding_mse": embedding_mse(z, z_hat),
        "ssim": ssim(covers, marked),
    }
    parts["total"] = total_loss(parts["text_loss"], parts["image_mse"], parts["embedding_mse"], parts["ssim"], cfg.weights)
    return parts


def build_full_model(cfg: TrainConfig, codec_ckpt: Checkpoint) -> WatermarkModel:
    if codec_ckpt is None:
        raise CheckpointError("train_full needs a pretrained codec checkpoint")
    torch.manual_seed(cfg.seed)
    model = WatermarkModel.from_config(cfg, len(codec_ckpt.vocab))
    codec_state = {k[len("codec."):]: v for k, v in codec_ckpt.params.items() if k.startswith("codec.")}
    model.codec.load_state_dict(codec_state)
    return model


def train_full(
    cfg: TrainConfig,
    data: PairedDataset,
    codec_ckpt: Checkpoint,
    val_data: PairedDataset | None = None,
    target: tuple[float, float] | None = None,
) -> TrainResult:
    """Train embedder and extractor jointly with the pretrained codec.

    The codec keeps a tiny learning rate (or is frozen with ``freeze_codec``).
    If ``target = (bleu, ssim)`` is given, training stops at the first
    validation pass that meets both.
    """
    if codec_ckpt is None:
        raise CheckpointError("train_full needs a pretrained codec checkpoint")
    if len(data) == 0:
        raise ValueError("training dataset is empty")
    cfg = replace(cfg, phase="full")
    vocab = codec_ckpt.vocab
    model = build_full_model(cfg, codec_ckpt)
    stego_params = list(model.embedder.parameters()) + list(model.extractor.parameters())
    groups = [{"params": stego_params, "lr": cfg.lr_stego}]
    if cfg.freeze_codec:
        model.codec.requires_grad_(False)
    else:
        groups.append({"params": list(model.codec.parameters()), "lr": cfg.lr_codec_full})
    opt = _adam(groups, cfg)

    data_rng = np.random.default_rng(cfg.seed)
    tokens = tokenize_batch(data.sentences, vocab)
    covers = data.image_batch()
    val_data = val_data or data
    pad = _pad_id(cfg, vocab)

    history: list[dict] = []
    best_key, best_params = None, None
    for epoch in range(1, cfg.full_epochs + 1):
        model.train()
        sums: dict[str, float] = {}
        nb = 0
        for idx in _batches(len(data), cfg.batch_size, data_rng):
            try:
                parts = full_losses(model, covers[idx], tokens[idx], cfg, pad)
            except NonFiniteError as e:
                raise TrainingDiverged(f"{e} at epoch {epoch}") from e
            _check_finite(parts["total"], "total loss", epoch)
            opt.zero_grad()
            parts["total"].backward()
            opt.step()
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v.item()
            nb += 1
        history.append({"epoch": epoch, "split": "train", **{k: v / nb for k, v in sums.items()}})
        if epoch % cfg.eval_every == 0 or epoch == cfg.full_epochs:
            model.eval()
            report, extra = evaluate_model(model, val_data, vocab, cfg.strength, through_png=True, return_extra=True)
            row = {"epoch": epoch, "split": "val", "image_mse": report.mse, "ssim": report.ssim,
                   "psnr_db": report.psnr_db, "bleu": report.bleu, "bleu_teacher_forced": extra["bleu_teacher_forced"]}
            history.append(row)
            log.info("full epoch %d total %.4f val bleu %.4f ssim %.4f", epoch, sums["total"] / nb, report.bleu, report.ssim)
            key = (report.bleu, report.ssim)
            if best_key is None or key > best_key:
                best_key, best_params = key, snapshot(model)
            if target and report.bleu >= target[0] and report.ssim >= target[1]:
                break
    last = Checkpoint("full", snapshot(model), vocab, cfg, history)
    best = Checkpoint("full", best_params, vocab, cfg, history)
    return TrainResult(best, last, history)
