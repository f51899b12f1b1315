"""The four networks bundled under canonical parameter-name prefixes.

``codec.encoder.*``, ``codec.decoder.*``, ``embedder.*``, ``extractor.*``.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import TrainConfig
from .stego_net import Embedder, Extractor, StegoConfig
from .text_codec import CodecConfig, TextCodec

CHANNEL_ORDER = ("cover_rgb", "cover_features_rgb", "text_plane")


def codec_config(cfg: TrainConfig, vocab_size: int) -> CodecConfig:
    c = cfg.codec
    return CodecConfig(
        vocab_size=vocab_size, backend=c.backend, num_layers=c.num_layers, d_model=c.d_model,
        ff_dim=c.ff_dim, num_heads=c.num_heads,
    )


def stego_config(cfg: TrainConfig) -> StegoConfig:
    s = cfg.stego
    return StegoConfig(
        image_size=s.image_size, patch_size=s.patch_size, vit_depth=s.vit_depth, vit_dim=s.vit_dim,
        vit_heads=s.vit_heads, mlp_ratio=s.mlp_ratio, strength=cfg.strength,
    )


class WatermarkModel(nn.Module):
    def __init__(self, codec_cfg: CodecConfig, stego_cfg: StegoConfig):
        super().__init__()
        self.codec = TextCodec(codec_cfg)
        self.embedder = Embedder(stego_cfg, codec_cfg.max_len * codec_cfg.d_model)
        self.extractor = Extractor(stego_cfg, codec_cfg.max_len, codec_cfg.d_model)
        self.stego_cfg = stego_cfg

    @classmethod
    def from_config(cls, cfg: TrainConfig, vocab_size: int) -> "WatermarkModel":
        return cls(codec_config(cfg, vocab_size), stego_config(cfg))

    def forward(self, covers: torch.Tensor, tokens: torch.Tensor, strength: float | None = None):
        """Teacher-forced pass; returns ``(z, marked, z_hat, logits)``."""
        z = self.codec.encode(tokens)
        marked = self.embedder(covers, z, strength)
        z_hat = self.extractor(marked)
        logits = self.codec.decode_teacher_forced(z_hat, tokens)
        return z, marked, z_hat, logits

    @torch.no_grad()
    def embed(self, covers: torch.Tensor, tokens: torch.Tensor, strength: float | None = None) -> torch.Tensor:
        return self.embedder(covers, self.codec.encode(tokens), strength)

    @torch.no_grad()
    def extract(self, marked: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Greedy-decoded token ids and the recovered embedding."""
        z_hat = self.extractor(marked)
        return self.codec.decode_greedy(z_hat), z_hat
