"""Run configuration, profiles and the YAML config-file schema.

Config file keys (all optional; unknown keys are rejected)::

    phase: pretrain_codec | full
    profile: paper | desk
    seed: int
    epochs: int                 # per-phase; overrides pretrain_epochs/full_epochs
    pretrain_epochs: int
    full_epochs: int
    batch_size: int
    lr_codec_pretrain: float
    lr_codec_full: float
    lr_stego: float
    freeze_codec: bool
    embedding_noise: bool
    noise_identity_weight: float
    mask_pad: bool
    eval_every: int
    strength: float
    weights: {text, image, embedding, ssim}
    codec: {backend, num_layers, d_model, ff_dim, num_heads}
    stego: {image_size, patch_size, vit_depth, vit_dim, vit_heads, mlp_ratio}
    grids: {rotation: [...], gaussian_blur: [...], salt_pepper: [...]}
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .objectives import LossWeights
from .perturb import DEFAULT_GRIDS, IMAGE_DISTORTIONS


class ConfigError(ValueError):
    pass


@dataclass
class CodecOptions:
    backend: str = "transformer"
    num_layers: int = 3
    d_model: int = 64
    ff_dim: int = 512
    num_heads: int = 4


@dataclass
class StegoOptions:
    image_size: int = 224
    patch_size: int = 16
    vit_depth: int = 3
    vit_dim: int = 768
    vit_heads: int = 12
    mlp_ratio: int = 4


@dataclass
class TrainConfig:
    phase: str = "pretrain_codec"
    profile: str = "paper"
    seed: int = 0
    pretrain_epochs: int = 300
    full_epochs: int = 100
    batch_size: int = 16
    lr_codec_pretrain: float = 1e-4
    lr_codec_full: float = 1e-8
    lr_stego: float = 1e-4
    freeze_codec: bool = False
    embedding_noise: bool = True
    noise_identity_weight: float = 0.0
    mask_pad: bool = False
    eval_every: int = 1
    strength: float = 0.8
    weights: LossWeights = field(default_factory=LossWeights)
    codec: CodecOptions = field(default_factory=CodecOptions)
    stego: StegoOptions = field(default_factory=StegoOptions)
    grids: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_GRIDS.items()})

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.phase not in ("pretrain_codec", "full"):
            raise ConfigError(f"phase: expected pretrain_codec or full, got {self.phase!r}")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile: expected one of {sorted(PROFILES)}, got {self.profile!r}")
        for name in ("pretrain_epochs", "full_epochs", "batch_size", "eval_every"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        for name in ("lr_codec_pretrain", "lr_codec_full", "lr_stego"):
            if float(getattr(self, name)) <= 0:
                raise ConfigError(f"{name}: learning rates must be > 0")
        if self.strength < 0:
            raise ConfigError("strength: must be >= 0")
        if not 0 <= self.noise_identity_weight <= 1:
            raise ConfigError("noise_identity_weight: must lie in [0, 1]")
        for k in self.grids:
            if k not in IMAGE_DISTORTIONS:
                raise ConfigError(f"grids.{k}: unknown distortion kind")

    @property
    def epochs(self) -> int:
        return self.pretrain_epochs if self.phase == "pretrain_codec" else self.full_epochs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        nested = {"weights": LossWeights, "codec": CodecOptions, "stego": StegoOptions}
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(f"{k}: unknown config field")
        for k, typ in nested.items():
            if k in d and isinstance(d[k], dict):
                sub_known = {f.name for f in fields(typ)}
                for sk in d[k]:
                    if sk not in sub_known:
                        raise ConfigError(f"{k}.{sk}: unknown config field")
                try:
                    d[k] = typ(**d[k])
                except ValueError as e:
                    raise ConfigError(f"{k}: {e}") from e
        return cls(**d)


PROFILES: dict[str, dict] = {
    "paper": {},
    "desk": {
        "pretrain_epochs": 500,
        "lr_codec_pretrain": 1e-3,
        "full_epochs": 2000,
        "batch_size": 8,
        "eval_every": 25,
        "codec": {"num_layers": 1, "d_model": 32, "ff_dim": 128, "num_heads": 4},
        "stego": {"image_size": 64, "patch_size": 8, "vit_depth": 2, "vit_dim": 128, "vit_heads": 4},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "grids":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def make_config(profile: str = "paper", overrides: dict | None = None) -> TrainConfig:
    """Defaults, then the profile, then explicit overrides (later wins)."""
    if profile not in PROFILES:
        raise ConfigError(f"profile: expected one of {sorted(PROFILES)}, got {profile!r}")
    base = TrainConfig().to_dict()
    d = _merge(_merge(base, PROFILES[profile]), overrides or {})
    d["profile"] = profile
    if "epochs" in d:
        epochs = d.pop("epochs")
        d["pretrain_epochs" if d.get("phase", "pretrain_codec") == "pretrain_codec" else "full_epochs"] = epochs
    return TrainConfig.from_dict(d)


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping of keys to values")
    return data
