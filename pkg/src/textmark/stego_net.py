"""ViT backbone plus the embedder and extractor networks.

Images are batched ``(B, C, H, W)`` tensors with values in [0, 1].  A patch
feature map is ``(B, N, P)`` with ``N = (H / patch)**2`` patches and
``P = patch * patch * 3`` values per patch, laid out row-major over the patch
grid and ``(row, col, channel)`` inside each patch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
from einops import rearrange


@dataclass
class StegoConfig:
    image_size: int = 224
    patch_size: int = 16
    vit_depth: int = 3
    vit_dim: int = 768
    vit_heads: int = 12
    mlp_ratio: int = 4
    strength: float = 0.8
    fusion_channels: int = 7

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("patch_size must divide image_size")
        if self.fusion_channels != 7:
            raise ValueError("fusion stage takes exactly 7 channels (cover, cover features, text plane)")
        if self.vit_dim % self.vit_heads:
            raise ValueError("vit_dim must be divisible by vit_heads")
        if self.strength < 0:
            raise ValueError("strength must be non-negative")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_values(self) -> int:
        return self.patch_size * self.patch_size * 3

    def to_dict(self) -> dict:
        return asdict(self)


RESIDUAL_INIT_SCALE = 0.01


def patchify(image: torch.Tensor, patch_size: int) -> torch.Tensor:
    return rearrange(image, "b c (gh ph) (gw pw) -> b (gh gw) (ph pw c)", ph=patch_size, pw=patch_size)


def features_to_image(features: torch.Tensor, patch_size: int, channels: int = 3) -> torch.Tensor:
    """Inverse of :func:`patchify`; a pure re-layout with no parameters."""
    b, n, p = features.shape
    grid = int(round(n**0.5))
    if grid * grid != n or p != patch_size * patch_size * channels:
        raise ValueError(
            f"cannot lay out {n} patches of {p} values as {channels}-channel {patch_size}x{patch_size} blocks"
        )
    return rearrange(
        features, "b (gh gw) (ph pw c) -> b c (gh ph) (gw pw)", gh=grid, ph=patch_size, pw=patch_size, c=channels
    )


def tile_text_plane(z: torch.Tensor, image_size: int) -> torch.Tensor:
    """Repeat the flattened embedding until it fills an ``image_size**2`` plane."""
    b = z.shape[0]
    flat = z.reshape(b, -1)
    reps, rem = divmod(image_size * image_size, flat.shape[1])
    if rem:
        raise ValueError(f"embedding of {flat.shape[1]} values does not tile a {image_size}x{image_size} plane")
    return flat.repeat(1, reps).view(b, 1, image_size, image_size)


class MLP(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class ViT(nn.Module):
    """CLS-free vision transformer returning one feature vector per patch.

    With ``out_dim`` set and different from the width, a linear head maps each
    token to ``out_dim`` values (needed when width != patch pixel count).
    """

    def __init__(self, cfg: StegoConfig, in_channels: int, out_dim: int | None = None):
        super().__init__()
        self.in_channels = in_channels
        self.image_size = cfg.image_size
        self.patch_embed = nn.Conv2d(in_channels, cfg.vit_dim, cfg.patch_size, stride=cfg.patch_size)
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.num_patches, cfg.vit_dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(Block(cfg.vit_dim, cfg.vit_heads, cfg.mlp_ratio) for _ in range(cfg.vit_depth))
        self.norm = nn.LayerNorm(cfg.vit_dim)
        self.head = nn.Linear(cfg.vit_dim, out_dim) if out_dim and out_dim != cfg.vit_dim else nn.Identity()

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() != 4 or image.shape[1] != self.in_channels:
            raise ValueError(f"expected (B, {self.in_channels}, H, W) input, got {tuple(image.shape)}")
        if image.shape[2:] != (self.image_size, self.image_size):
            raise ValueError(f"expected {self.image_size}x{self.image_size} input, got {tuple(image.shape[2:])}")
        x = self.patch_embed(image).flatten(2).transpose(1, 2) + self.pos_embed
        for blk in self.blocks:
            x = blk(x)
        return self.head(self.norm(x))


class Embedder(nn.Module):
    def __init__(self, cfg: StegoConfig, text_values: int):
        super().__init__()
        self.cfg = cfg
        if (cfg.image_size**2) % text_values:
            raise ValueError("text embedding size must divide the image plane")
        self.cover_vit = ViT(cfg, 3, cfg.patch_values)
        self.fusion_vit = ViT(cfg, cfg.fusion_channels, cfg.patch_values)
        # start close to marked == cover so the residual grows only as the text loss asks for it
        last = self.fusion_vit.head if isinstance(self.fusion_vit.head, nn.Linear) else self.fusion_vit.norm
        with torch.no_grad():
            last.weight.mul_(RESIDUAL_INIT_SCALE)
            last.bias.zero_()

    def residual(self, cover: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        p = self.cfg.patch_size
        cover_feat = features_to_image(self.cover_vit(cover), p)
        plane = tile_text_plane(z, self.cfg.image_size).to(cover.dtype)
        stacked = torch.cat([cover, cover_feat, plane], dim=1)
        return features_to_image(self.fusion_vit(stacked), p)

    def forward(self, cover: torch.Tensor, z: torch.Tensor, strength: float | None = None) -> torch.Tensor:
        alpha = self.cfg.strength if strength is None else strength
        if alpha < 0:
            raise ValueError("strength must be non-negative")
        if alpha == 0:
            return cover.clone()
        return torch.clamp(cover + alpha * self.residual(cover, z), 0.0, 1.0)


class Extractor(nn.Module):
    def __init__(self, cfg: StegoConfig, seq_len: int, d_model: int):
        super().__init__()
        self.seq_len, self.d_model = seq_len, d_model
        self.vit = ViT(cfg, 3)
        self.fc = nn.Linear(cfg.vit_dim, seq_len * d_model)

    def forward(self, marked: torch.Tensor) -> torch.Tensor:
        pooled = self.vit(marked).mean(dim=1)
        return self.fc(pooled).view(-1, self.seq_len, self.d_model)
