"""Single-file checkpoints.

A checkpoint is a ``torch.save`` mapping::

    format_version: int
    phase:          "pretrain_codec" | "full"
    params:         {canonical name: tensor}
    vocab:          [word, ...]   (reserved tokens excluded)
    config:         TrainConfig as a plain dict
    history:        [{epoch, split, ...metrics}, ...]
    channel_order:  fusion-stage channel layout
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch

from .config import TrainConfig
from .model import CHANNEL_ORDER, WatermarkModel, codec_config
from .text_codec import TextCodec, Vocabulary

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    phase: str
    params: dict[str, torch.Tensor]
    vocab: Vocabulary
    config: TrainConfig
    history: list[dict] = field(default_factory=list)

    def save(self, path) -> None:
        torch.save(
            {
                "format_version": FORMAT_VERSION,
                "phase": self.phase,
                "params": {k: v.detach().cpu().clone() for k, v in self.params.items()},
                "vocab": self.vocab.words,
                "config": self.config.to_dict(),
                "history": self.history,
                "channel_order": list(CHANNEL_ORDER),
            },
            Path(path),
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        p = Path(path)
        if not p.is_file():
            raise CheckpointError(f"checkpoint not found: {p}")
        try:
            raw = torch.load(p, map_location="cpu", weights_only=True)
        except Exception as e:
            raise CheckpointError(f"unreadable checkpoint {p}: {e}") from e
        if not isinstance(raw, dict) or raw.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{p}: unsupported checkpoint format")
        if tuple(raw.get("channel_order", CHANNEL_ORDER)) != CHANNEL_ORDER:
            raise CheckpointError(f"{p}: incompatible fusion channel order {raw['channel_order']}")
        return cls(
            phase=raw["phase"],
            params=raw["params"],
            vocab=Vocabulary(raw["vocab"]),
            config=TrainConfig.from_dict(raw["config"]),
            history=raw["history"],
        )

    def build_codec(self) -> TextCodec:
        codec = TextCodec(codec_config(self.config, len(self.vocab)))
        state = {k[len("codec."):]: v for k, v in self.params.items() if k.startswith("codec.")}
        codec.load_state_dict(state)
        return codec.eval()

    def build_model(self) -> WatermarkModel:
        if self.phase != "full":
            raise CheckpointError(f"need a full-phase checkpoint, got phase {self.phase!r}")
        model = WatermarkModel.from_config(self.config, len(self.vocab))
        model.load_state_dict(self.params)
        return model.eval()


def snapshot(module: torch.nn.Module, prefix: str = "") -> dict[str, torch.Tensor]:
    return {prefix + k: v.detach().clone() for k, v in module.state_dict().items()}
