"""Text-in-image watermarking with a pretrained text codec and ViT embedder/extractor."""

from .checkpoint import Checkpoint
from .config import TrainConfig, make_config
from .model import WatermarkModel
from .text_codec import Vocabulary, build_vocabulary, detokenize, tokenize

__all__ = [
    "Checkpoint",
    "TrainConfig",
    "Vocabulary",
    "WatermarkModel",
    "build_vocabulary",
    "detokenize",
    "make_config",
    "tokenize",
]
__version__ = "0.1.0"
