"""Embedding-space noise for codec pretraining and image distortions for attacks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

EMBEDDING_NOISE_KINDS = ("zero_mask", "blur1d", "gaussian")
IMAGE_DISTORTIONS = ("rotation", "gaussian_blur", "salt_pepper")

DEFAULT_GRIDS = {
    "rotation": [0.0, 5.0, 10.0, 15.0, 30.0],
    "gaussian_blur": [0.0, 0.5, 1.0, 2.0, 3.0],
    "salt_pepper": [0.0, 0.02, 0.05, 0.1, 0.2],
}


@dataclass(frozen=True)
class EmbeddingNoiseSpec:
    kind: str  # one of EMBEDDING_NOISE_KINDS, or "identity"
    seed: int = 0
    zero_fraction: float = 0.30
    blur_sigma: float = 1.0
    blur_radius: int = 2
    gaussian_mean: float = 0.0
    gaussian_std: float = 2.0

    def __post_init__(self):
        if self.kind not in (*EMBEDDING_NOISE_KINDS, "identity"):
            raise ValueError(f"unknown embedding noise kind {self.kind!r}")
        if not 0.0 <= self.zero_fraction <= 1.0:
            raise ValueError("zero_fraction must lie in [0, 1]")
        if self.blur_sigma <= 0 or self.gaussian_std <= 0:
            raise ValueError("noise sigmas must be positive")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be non-negative")


@dataclass(frozen=True)
class ImageDistortionSpec:
    kind: str
    severity: float  # degrees | blur sigma | flip density
    seed: int = 0

    def __post_init__(self):
        if self.kind not in IMAGE_DISTORTIONS:
            raise ValueError(f"unknown image distortion {self.kind!r}")
        if not math.isfinite(self.severity):
            raise ValueError("severity must be finite")
        if self.kind == "salt_pepper" and not 0.0 <= self.severity <= 1.0:
            raise ValueError("salt-and-pepper density must lie in [0, 1]")
        if self.kind == "gaussian_blur" and self.severity < 0:
            raise ValueError("blur sigma must be non-negative")


def _generator(seed: int, device="cpu") -> torch.Generator:
    g = torch.Generator(device=device)
    g.manual_seed(int(seed))
    return g


def gaussian_kernel1d(sigma: float, radius: int, dtype=torch.float64) -> torch.Tensor:
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    k = torch.exp(-(x**2) / (2 * sigma**2))
    return (k / k.sum()).to(dtype)


def apply_embedding_noise(z: torch.Tensor, spec: EmbeddingNoiseSpec) -> torch.Tensor:
    """Perturb a batch of embeddings ``(B, L, D)`` (or a single ``(L, D)``).

    Blur runs along each sample's flattened ``L * D`` vector.
    """
    if spec.kind == "identity":
        return z
    g = _generator(spec.seed)
    if spec.kind == "zero_mask":
        keep = torch.rand(z.shape, generator=g, dtype=torch.float64) >= spec.zero_fraction
        return z * keep.to(z.dtype)
    if spec.kind == "gaussian":
        noise = torch.randn(z.shape, generator=g, dtype=torch.float64) * spec.gaussian_std + spec.gaussian_mean
        return z + noise.to(z.dtype)
    # blur1d
    shape = z.shape
    flat = z.reshape(-1, 1, shape[-2] * shape[-1]) if z.dim() == 3 else z.reshape(1, 1, -1)
    k = gaussian_kernel1d(spec.blur_sigma, spec.blur_radius, z.dtype).view(1, 1, -1)
    out = F.conv1d(F.pad(flat, (spec.blur_radius, spec.blur_radius), mode="reflect"), k)
    return out.reshape(shape)


def sample_noise_kind(rng: np.random.Generator, identity_weight: float = 0.0, **spec_kwargs) -> EmbeddingNoiseSpec:
    """Pick a noise kind uniformly, or ``identity`` with probability ``identity_weight``."""
    if not 0.0 <= identity_weight <= 1.0:
        raise ValueError("identity_weight must lie in [0, 1]")
    seed = int(rng.integers(0, 2**31 - 1))
    if identity_weight > 0 and rng.random() < identity_weight:
        return EmbeddingNoiseSpec("identity", seed=seed, **spec_kwargs)
    kind = EMBEDDING_NOISE_KINDS[int(rng.integers(0, len(EMBEDDING_NOISE_KINDS)))]
    return EmbeddingNoiseSpec(kind, seed=seed, **spec_kwargs)


def rotate(img: torch.Tensor, degrees: float) -> torch.Tensor:
    """Counter-clockwise rotation about the center, bilinear, zero fill."""
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    theta = torch.tensor([[c, -s, 0.0], [s, c, 0.0]], dtype=img.dtype, device=img.device)
    theta = theta.unsqueeze(0).expand(img.shape[0], 2, 3)
    grid = F.affine_grid(theta, list(img.shape), align_corners=False)
    return F.grid_sample(img, grid, mode="bilinear", padding_mode="zeros", align_corners=False)


def gaussian_blur(img: torch.Tensor, sigma: float) -> torch.Tensor:
    radius = math.ceil(3 * sigma)
    k = gaussian_kernel1d(sigma, radius, img.dtype).to(img.device)
    ch = img.shape[1]
    kx = k.view(1, 1, 1, -1).expand(ch, 1, 1, -1)
    ky = k.view(1, 1, -1, 1).expand(ch, 1, -1, 1)
    x = F.conv2d(F.pad(img, (radius, radius, 0, 0), mode="reflect"), kx, groups=ch)
    return F.conv2d(F.pad(x, (0, 0, radius, radius), mode="reflect"), ky, groups=ch)


def salt_pepper(img: torch.Tensor, density: float, seed: int) -> torch.Tensor:
    """Flip whole pixels (all channels) to 0 or 1, each with probability density/2."""
    g = _generator(seed)
    b, _, h, w = img.shape
    u = torch.rand((b, 1, h, w), generator=g, dtype=torch.float64).to(img.device)
    out = img.clone()
    pepper = (u < density / 2).expand_as(img)
    salt = ((u >= density / 2) & (u < density)).expand_as(img)
    out[pepper] = 0.0
    out[salt] = 1.0
    return out


def distort_image(img: torch.Tensor, spec: ImageDistortionSpec) -> torch.Tensor:
    """Apply one distortion to a ``(B, 3, H, W)`` or ``(3, H, W)`` batch; severity 0 is an exact no-op."""
    single = img.dim() == 3
    x = img.unsqueeze(0) if single else img
    if spec.severity == 0:
        out = x.clone()
    elif spec.kind == "rotation":
        out = rotate(x, spec.severity)
    elif spec.kind == "gaussian_blur":
        out = gaussian_blur(x, spec.severity)
    else:
        out = salt_pepper(x, spec.severity, spec.seed)
    out = out.clamp(0.0, 1.0)
    return out[0] if single else out
