"""Image folders, sentence files, random pairing and a synthetic dataset."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def image_to_tensor(img: Image.Image, size: int) -> torch.Tensor:
    """RGB ``(3, size, size)`` float32 tensor in [0, 1]; grayscale is replicated."""
    img = img.convert("RGB")
    if img.size != (size, size):
        img = img.resize((size, size), Image.Resampling.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).contiguous()


def tensor_to_uint8(img: torch.Tensor) -> np.ndarray:
    arr = img.detach().double().clamp(0, 1).permute(1, 2, 0).cpu().numpy()
    return np.round(arr * 255.0).astype(np.uint8)


def quantize(img: torch.Tensor) -> torch.Tensor:
    """Round-trip through 8-bit levels, as writing and re-reading a PNG would."""
    levels = torch.round(img.detach().double().clamp(0, 1) * 255.0)
    return levels.to(img.dtype) / 255.0


def read_image(path, size: int) -> torch.Tensor:
    with Image.open(path) as img:
        return image_to_tensor(img, size)


def write_png(img: torch.Tensor, path) -> None:
    Image.fromarray(tensor_to_uint8(img)).save(path, format="PNG")


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"image directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_images(directory, target_size: int = 224) -> Iterator[tuple[Path, torch.Tensor]]:
    """Yield ``(path, image)`` in sorted filename order, skipping undecodable files."""
    paths = list_images(directory)
    if not paths:
        raise FileNotFoundError(f"no PNG/JPEG images in {directory}")
    yielded = 0
    for p in paths:
        try:
            img = read_image(p, target_size)
        except (UnidentifiedImageError, OSError) as e:
            log.warning("skipping undecodable image %s: %s", p, e)
            continue
        yielded += 1
        yield p, img
    if yielded == 0:
        raise ValueError(f"no decodable images in {directory}")


def load_sentences(path) -> list[str]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"sentence file not found: {p}")
    out = []
    for lineno, raw in enumerate(p.read_bytes().splitlines(), start=1):
        try:
            line = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ValueError(f"{p}:{lineno}: invalid UTF-8 ({e.reason})") from e
        if line.strip():
            out.append(line.strip())
    return out


@dataclass
class PairedDataset:
    images: list[torch.Tensor]
    sentences: list[str]
    seed: int = 0
    split: str = "train"
    image_refs: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) != len(self.sentences):
            raise ValueError("images and sentences must pair up one-to-one")

    def __len__(self) -> int:
        return len(self.images)

    def image_batch(self, idx: Sequence[int] | None = None) -> torch.Tensor:
        idx = range(len(self)) if idx is None else idx
        return torch.stack([self.images[i] for i in idx])

    def manifest(self) -> dict:
        return {"images": list(self.image_refs), "sentences": list(self.sentences), "seed": self.seed, "split": self.split}

    def write_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2) + "\n", encoding="utf-8")


def pair_random(images: Sequence[torch.Tensor], sentences: Sequence[str], seed: int, refs=None, split="train") -> PairedDataset:
    """Give each image a random sentence; sentences are reused only when there are too few."""
    if not images or not sentences:
        raise ValueError("pairing needs at least one image and one sentence")
    rng = np.random.default_rng(seed)
    n = len(images)
    if len(sentences) >= n:
        pick = rng.permutation(len(sentences))[:n]
    else:
        pick = rng.integers(0, len(sentences), size=n)
    return PairedDataset(
        list(images),
        [sentences[i] for i in pick],
        seed=seed,
        split=split,
        image_refs=[str(r) for r in refs] if refs is not None else [],
    )


def load_paired(image_dir, sentence_file, size: int, seed: int, split: str = "train") -> PairedDataset:
    loaded = list(load_images(image_dir, size))
    sentences = load_sentences(sentence_file)
    return pair_random([t for _, t in loaded], sentences, seed, refs=[p.name for p, _ in loaded], split=split)


# -- synthetic data -------------------------------------------------------------

_SUBJECTS = ["a dog", "a cat", "two men", "a woman", "a child", "three girls", "an old man", "a young boy",
             "a brown horse", "the band"]
_VERBS = ["runs", "sits", "plays", "walks", "stands", "jumps", "waits", "rests"]
_PLACES = ["on the grass", "near the river", "in a park", "by the road", "on a bench", "inside the house",
           "under a tree", "at the beach"]
_TAILS = ["", "at night", "with a red ball", "while it rains", "next to a small blue car", "in the morning sun"]

IMAGE_KINDS = ("gradient", "checkerboard", "smooth", "mixed")


def _synth_sentence(rng: np.random.Generator) -> str:
    parts = [_SUBJECTS[rng.integers(len(_SUBJECTS))], _VERBS[rng.integers(len(_VERBS))],
             _PLACES[rng.integers(len(_PLACES))], _TAILS[rng.integers(len(_TAILS))]]
    return " ".join(p for p in parts if p)


def _synth_image(rng: np.random.Generator, kind: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    if kind == "gradient":
        a = rng.uniform(-1, 1, size=(3, 3))
        img = a[:, 0, None, None] * xx + a[:, 1, None, None] * yy + a[:, 2, None, None]
    elif kind == "checkerboard":
        cell = int(rng.integers(4, 17))
        board = ((np.arange(size)[:, None] // cell + np.arange(size)[None, :] // cell) % 2).astype(float)
        lo, hi = rng.uniform(0.1, 0.4, size=3), rng.uniform(0.6, 0.9, size=3)
        img = lo[:, None, None] + (hi - lo)[:, None, None] * board
    else:
        # smooth random field: a few random low-frequency sinusoids per channel
        img = np.zeros((3, size, size))
        for c in range(3):
            for _ in range(4):
                fx, fy = rng.uniform(0.5, 3.0, size=2)
                ph = rng.uniform(0, 2 * np.pi)
                img[c] += rng.uniform(0.2, 1.0) * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
    return (0.1 + 0.8 * img).astype(np.float32)


def synth_dataset(seed: int, n: int, image_kind: str = "mixed", size: int = 224, split: str = "train") -> PairedDataset:
    """Procedural images and template sentences, fully determined by ``seed``.

    Sentences within one dataset are distinct whenever the grammar allows.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if image_kind not in IMAGE_KINDS:
        raise ValueError(f"image_kind must be one of {IMAGE_KINDS}")
    rng = np.random.default_rng(seed)
    kinds = ("gradient", "checkerboard", "smooth")
    images = []
    for i in range(n):
        kind = kinds[i % 3] if image_kind == "mixed" else image_kind
        images.append(torch.from_numpy(_synth_image(rng, kind, size)))
    sentences: list[str] = []
    seen = set()
    for _ in range(n):
        for _attempt in range(100):
            s = _synth_sentence(rng)
            if s not in seen:
                break
        seen.add(s)
        sentences.append(s)
    refs = [f"synth_{seed}_{i:04d}.png" for i in range(n)]
    return PairedDataset(images, sentences, seed=seed, split=split, image_refs=refs)


def write_dataset(ds: PairedDataset, image_dir, sentence_file) -> None:
    """Materialize a dataset as a PNG folder plus a sentence file (one per image, same order)."""
    image_dir = Path(image_dir)
    image_dir.mkdir(parents=True, exist_ok=True)
    for ref, img in zip(ds.image_refs, ds.images):
        write_png(img, image_dir / ref)
    Path(sentence_file).write_text("\n".join(ds.sentences) + "\n", encoding="utf-8")
