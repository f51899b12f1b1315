"""Vocabulary, tokenization and the sentence autoencoder.

A sentence is normalized to exactly ``max_len`` (16) vocabulary indices.  The
encoder maps those indices to a ``max_len x d_model`` embedding; the decoder
regenerates the sentence from it autoregressively.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import torch
import torch.nn as nn

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
RESERVED = (PAD, UNK, BOS, EOS)
MAX_LEN = 16

VOCAB_HEADER = "#textmark-vocab v1 reserved=" + ",".join(RESERVED)


class Vocabulary:
    """Bijective word <-> index map with four reserved entries at 0..3."""

    def __init__(self, words: Sequence[str] = ()):
        self.itos: list[str] = list(RESERVED)
        for w in words:
            if w in RESERVED:
                raise ValueError(f"reserved token {w!r} cannot be a vocabulary word")
            self.itos.append(w)
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate words in vocabulary")

    pad_id = 0
    unk_id = 1
    bos_id = 2
    eos_id = 3

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __contains__(self, word: str) -> bool:
        return word in self.stoi

    @property
    def words(self) -> list[str]:
        return self.itos[len(RESERVED):]

    def dumps(self) -> str:
        return "\n".join([VOCAB_HEADER, *self.words]) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if not lines or lines[0] != VOCAB_HEADER:
            raise ValueError(f"not a vocabulary file (expected header {VOCAB_HEADER!r})")
        if lines[-1] == "":
            lines = lines[:-1]
        return cls(lines[1:])

    def save(self, path) -> None:
        Path(path).write_bytes(self.dumps().encode("utf-8"))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.loads(Path(path).read_bytes().decode("utf-8"))


def split_words(sentence: str) -> list[str]:
    return sentence.lower().split()


def build_vocabulary(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Index every word seen at least ``min_count`` times.

    Words are ordered by descending frequency, ties broken alphabetically, so
    the result does not depend on corpus order.
    """
    counts: Counter[str] = Counter()
    n = 0
    for sentence in corpus:
        n += 1
        counts.update(w for w in split_words(sentence) if w not in RESERVED)
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return Vocabulary(kept)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    length: int  # word count before truncation/padding

    def tensor(self) -> torch.Tensor:
        return torch.tensor(self.ids, dtype=torch.long)


def tokenize(sentence: str, vocab: Vocabulary, max_len: int = MAX_LEN) -> TokenSequence:
    words = split_words(sentence)
    ids = []
    for w in words[:max_len]:
        i = vocab.stoi.get(w, vocab.unk_id)
        # literal reserved markers in input text are not allowed to smuggle in PAD/BOS/EOS
        if i in (vocab.pad_id, vocab.bos_id, vocab.eos_id):
            i = vocab.unk_id
        ids.append(i)
    ids += [vocab.pad_id] * (max_len - len(ids))
    return TokenSequence(tuple(ids), len(words))


def tokenize_batch(sentences: Sequence[str], vocab: Vocabulary, max_len: int = MAX_LEN) -> torch.Tensor:
    return torch.tensor([tokenize(s, vocab, max_len).ids for s in sentences], dtype=torch.long)


def detokenize(tokens, vocab: Vocabulary) -> str:
    ids = tokens.ids if isinstance(tokens, TokenSequence) else [int(i) for i in tokens]
    out = []
    for i in ids:
        if i < 0 or i >= len(vocab):
            raise IndexError(f"token index {i} outside vocabulary of size {len(vocab)}")
        if i in (vocab.pad_id, vocab.bos_id, vocab.eos_id):
            continue
        out.append(vocab.itos[i])
    return " ".join(out)


@dataclass
class CodecConfig:
    vocab_size: int
    backend: str = "transformer"
    num_layers: int = 3
    d_model: int = 64
    ff_dim: int = 512
    num_heads: int = 4
    max_len: int = MAX_LEN
    dropout: float = 0.0

    def __post_init__(self):
        if self.backend not in ("transformer", "gru"):
            raise ValueError(f"unknown codec backend {self.backend!r}")
        for name in ("num_layers", "d_model", "ff_dim", "num_heads", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.vocab_size < len(RESERVED):
            raise ValueError("vocab_size must include the reserved tokens")
        if self.d_model % self.num_heads:
            raise ValueError("d_model must be divisible by num_heads")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_encoding(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe.float()


def _causal_mask(n: int, device, dtype) -> torch.Tensor:
    return torch.triu(torch.full((n, n), float("-inf"), device=device, dtype=dtype), diagonal=1)


class TransformerTextEncoder(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.register_buffer("positional", sinusoidal_encoding(cfg.max_len, cfg.d_model), persistent=False)
        layer = nn.TransformerEncoderLayer(
            cfg.d_model, cfg.num_heads, cfg.ff_dim, cfg.dropout, activation="gelu", batch_first=True
        )
        self.layers = nn.TransformerEncoder(layer, cfg.num_layers, enable_nested_tensor=False)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        x = self.token_embedding(tokens) * math.sqrt(self.cfg.d_model)
        x = x + self.positional[: tokens.shape[1]].to(x.dtype)
        return self.layers(x)


class TransformerTextDecoder(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.register_buffer("positional", sinusoidal_encoding(cfg.max_len, cfg.d_model), persistent=False)
        layer = nn.TransformerDecoderLayer(
            cfg.d_model, cfg.num_heads, cfg.ff_dim, cfg.dropout, activation="gelu", batch_first=True
        )
        self.layers = nn.TransformerDecoder(layer, cfg.num_layers)
        self.out = nn.Linear(cfg.d_model, cfg.vocab_size)

    def forward(self, inputs: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        n = inputs.shape[1]
        x = self.token_embedding(inputs) * math.sqrt(self.cfg.d_model)
        x = x + self.positional[:n].to(x.dtype)
        mask = _causal_mask(n, x.device, x.dtype)
        h = self.layers(x, memory, tgt_mask=mask)
        return self.out(h)


class GRUTextEncoder(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.rnn = nn.GRU(cfg.d_model, cfg.d_model, cfg.num_layers, batch_first=True)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        out, _ = self.rnn(self.token_embedding(tokens))
        return out


class GRUTextDecoder(nn.Module):
    """GRU decoder whose initial hidden state is a linear readout of the whole embedding."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.init_state = nn.Linear(cfg.max_len * cfg.d_model, cfg.num_layers * cfg.d_model)
        self.rnn = nn.GRU(cfg.d_model, cfg.d_model, cfg.num_layers, batch_first=True)
        self.out = nn.Linear(cfg.d_model, cfg.vocab_size)

    def forward(self, inputs: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        b = memory.shape[0]
        h0 = torch.tanh(self.init_state(memory.reshape(b, -1)))
        h0 = h0.view(b, self.cfg.num_layers, self.cfg.d_model).transpose(0, 1).contiguous()
        out, _ = self.rnn(self.token_embedding(inputs), h0)
        return self.out(out)


class TextCodec(nn.Module):
    """Encoder/decoder pair operating on batches of ``(B, max_len)`` token ids."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.backend == "transformer":
            self.encoder = TransformerTextEncoder(cfg)
            self.decoder = TransformerTextDecoder(cfg)
        else:
            self.encoder = GRUTextEncoder(cfg)
            self.decoder = GRUTextDecoder(cfg)

    def _check_tokens(self, tokens: torch.Tensor) -> None:
        if tokens.dim() != 2 or tokens.shape[1] != self.cfg.max_len:
            raise ValueError(f"expected tokens of shape (B, {self.cfg.max_len}), got {tuple(tokens.shape)}")
        if tokens.dtype != torch.long:
            raise TypeError("token ids must be torch.long")
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            raise IndexError("token index outside vocabulary")

    def _check_embedding(self, z: torch.Tensor) -> None:
        want = (self.cfg.max_len, self.cfg.d_model)
        if z.dim() != 3 or tuple(z.shape[1:]) != want:
            raise ValueError(f"expected embedding of shape (B, {want[0]}, {want[1]}), got {tuple(z.shape)}")

    def encode(self, tokens: torch.Tensor) -> torch.Tensor:
        self._check_tokens(tokens)
        return self.encoder(tokens)

    def decode_teacher_forced(self, z: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """Logits ``(B, max_len, C)``; row t sees ``target[:, :t]`` and the embedding."""
        self._check_embedding(z)
        self._check_tokens(target)
        bos = torch.full_like(target[:, :1], BOS_ID)
        inputs = torch.cat([bos, target[:, :-1]], dim=1)
        return self.decoder(inputs, z)

    @torch.no_grad()
    def decode_greedy(self, z: torch.Tensor) -> torch.Tensor:
        self._check_embedding(z)
        inputs = torch.full((z.shape[0], 1), BOS_ID, dtype=torch.long, device=z.device)
        for _ in range(self.cfg.max_len):
            logits = self.decoder(inputs, z)
            nxt = logits[:, -1].argmax(dim=-1, keepdim=True)
            inputs = torch.cat([inputs, nxt], dim=1)
        return inputs[:, 1:]


BOS_ID = RESERVED.index(BOS)


def encode_text(tokens: TokenSequence, codec: TextCodec) -> torch.Tensor:
    """Single-sentence convenience wrapper returning a ``(max_len, d_model)`` tensor."""
    with torch.no_grad():
        return codec.encode(tokens.tensor().unsqueeze(0))[0]


def decode_greedy(z: torch.Tensor, codec: TextCodec) -> TokenSequence:
    ids = codec.decode_greedy(z.unsqueeze(0))[0].tolist()
    length = next((i for i, t in enumerate(ids) if t == Vocabulary.pad_id), len(ids))
    return TokenSequence(tuple(ids), length)
