"""Word-level tokenizer, a small trainable Transformer encoder, and the KEAE cache format."""

from __future__ import annotations

import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc
from .errors import FormatError, InvalidConfigError, InvalidIdError
from .numcore import SplitMix64, Tensor

PAD, CLS, SEP, UNK = "[PAD]", "[CLS]", "[SEP]", "[UNK]"
RESERVED = (PAD, CLS, SEP, UNK)
PAD_ID, CLS_ID, SEP_ID, UNK_ID = range(4)

_TOKEN_RE = re.compile(r"<user>|<url>|\w+|[^\w\s]")


# ---------------------------------------------------------------- tokenisation


@dataclass
class TokenSequence:
    tokens: list[str]
    ids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)


def split_words(text: str) -> list[str]:
    """Lowercase, split on whitespace, and split punctuation marks off as tokens."""
    return _TOKEN_RE.findall(text.lower())


def tokenize(text: str | Sequence[str], is_conversation: bool = False, max_len: int = 64,
             vocab: "Vocabulary | None" = None) -> TokenSequence:
    if is_conversation:
        utterances = [text] if isinstance(text, str) else list(text)
    else:
        utterances = [text if isinstance(text, str) else " ".join(text)]
    tokens = [CLS]
    first = True
    for utt in utterances:
        words = split_words(utt)
        if not words:
            continue
        if not first:
            tokens.append(SEP)
        tokens.extend(words)
        first = False
    tokens = tokens[:max_len]
    ids = vocab.encode(tokens) if vocab is not None else []
    return TokenSequence(tokens, ids)


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        for t in tokens:
            if t not in RESERVED:
                self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise InvalidConfigError("vocabulary tokens must be unique")

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], min_freq: int = 2) -> "Vocabulary":
        counts = Counter(t for seq in sequences for t in seq if t not in RESERVED)
        kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        return cls(kept)

    def __len__(self) -> int:
        return len(self.itos)

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def to_list(self) -> list[str]:
        return list(self.itos[len(RESERVED):])


# ---------------------------------------------------------------- encoder


@dataclass
class EncoderConfig:
    l_c: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 64
    vocab_size: int = 4
    seed: int = 0
    min_freq: int = 2
    output_gain: float | None = None

    def validate(self) -> None:
        for name in ("l_c", "layers", "heads", "max_len", "vocab_size"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"encoder {name} must be positive")
        if self.l_c % self.heads:
            raise InvalidConfigError(f"l_c={self.l_c} not divisible by heads={self.heads}")


@dataclass
class ContextualEncoding:
    H_c: Tensor
    trainable: bool = True

    @property
    def h_0(self) -> Tensor:
        return self.H_c[..., 0, :]


def init_encoder_params(cfg: EncoderConfig, rng: SplitMix64) -> dict[str, Tensor]:
    cfg.validate()
    d = cfg.l_c
    p = {
        "enc.tok": nc.glorot(rng, cfg.vocab_size, d),
        "enc.pos": nc.glorot(rng, cfg.max_len, d),
    }
    for i in range(cfg.layers):
        k = f"enc.{i}."
        for m in ("q", "k", "v", "o"):
            p[k + f"W{m}"] = nc.glorot(rng, d, d)
            p[k + f"b{m}"] = nc.zeros(d)
        p[k + "ln1.g"] = nc.ones(d)
        p[k + "ln1.b"] = nc.zeros(d)
        p[k + "ff.W1"] = nc.glorot(rng, d, 2 * d)
        p[k + "ff.b1"] = nc.zeros(2 * d)
        p[k + "ff.W2"] = nc.glorot(rng, 2 * d, d)
        p[k + "ff.b2"] = nc.zeros(d)
        p[k + "ln2.g"] = nc.ones(d)
        p[k + "ln2.b"] = nc.zeros(d)
    # unscaled knowledge attention scores the query against itself with |h_0|^2,
    # so the last norm starts at unit-length rows rather than sqrt(l_c)
    gain = cfg.output_gain if cfg.output_gain is not None else d ** -0.5
    p[f"enc.{cfg.layers - 1}.ln2.g"] = Tensor(np.full(d, gain), requires_grad=True)
    for name, t in p.items():
        t.name = name
    return p


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    return nc.transpose(x.reshape(*lead, n, heads, d // heads), (*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    k = len(lead)
    return nc.transpose(x, (*range(k), k + 1, k, k + 2)).reshape(*lead, n, h * dh)


def self_attention(x: Tensor, params: dict[str, Tensor], prefix: str, heads: int,
                   mask: np.ndarray | None = None, weights_out: list | None = None) -> Tensor:
    """Scaled dot-product multi-head self-attention over ``x`` (... x N x d)."""
    d = x.shape[-1]
    dh = d // heads
    q = _split_heads(nc.affine(x, params[prefix + "Wq"], params[prefix + "bq"]), heads)
    k = _split_heads(nc.affine(x, params[prefix + "Wk"], params[prefix + "bk"]), heads)
    v = _split_heads(nc.affine(x, params[prefix + "Wv"], params[prefix + "bv"]), heads)
    scores = nc.matmul(q, nc.swap_last(k)) * (1.0 / np.sqrt(dh))
    key_mask = None
    if mask is not None:
        key_mask = np.asarray(mask, dtype=bool)[..., None, None, :]
    attn = nc.softmax(scores, axis=-1, mask=key_mask)
    if weights_out is not None:
        weights_out.append(attn.data)
    ctx = _merge_heads(nc.matmul(attn, v))
    return nc.affine(ctx, params[prefix + "Wo"], params[prefix + "bo"])


def encode_ids(ids: np.ndarray, params: dict[str, Tensor], cfg: EncoderConfig,
               mask: np.ndarray | None = None, weights_out: list | None = None) -> Tensor:
    """Contextual encoding for a (B x) N array of ids; padded keys are masked out."""
    ids = np.asarray(ids, dtype=np.int64)
    n = ids.shape[-1]
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise InvalidIdError(f"token ids must lie in [0, {cfg.vocab_size}); got [{ids.min()}, {ids.max()}]")
    if n > cfg.max_len:
        raise InvalidIdError(f"sequence of {n} tokens exceeds max_len={cfg.max_len}")
    x = nc.embedding(params["enc.tok"], ids) + params["enc.pos"][:n]
    for i in range(cfg.layers):
        k = f"enc.{i}."
        x = nc.layer_norm(x + self_attention(x, params, k, cfg.heads, mask, weights_out),
                          params[k + "ln1.g"], params[k + "ln1.b"])
        hidden = nc.relu(nc.affine(x, params[k + "ff.W1"], params[k + "ff.b1"]))
        x = nc.layer_norm(x + nc.affine(hidden, params[k + "ff.W2"], params[k + "ff.b2"]),
                          params[k + "ln2.g"], params[k + "ln2.b"])
    return x


def encode(seq: TokenSequence, params: dict[str, Tensor], cfg: EncoderConfig) -> ContextualEncoding:
    return ContextualEncoding(encode_ids(np.asarray(seq.ids), params, cfg))


# ---------------------------------------------------------------- KEAE cache

KEAE_MAGIC = b"KEAE"
KEAE_VERSION = 1
_KEAE_HEADER = struct.Struct("<4sIII")


def keae_bytes(H_c: np.ndarray) -> bytes:
    H_c = np.asarray(H_c)
    if H_c.ndim != 2 or 0 in H_c.shape:
        raise FormatError(f"embedding matrix must be non-empty N x l_c, got {H_c.shape}")
    n, l_c = H_c.shape
    return _KEAE_HEADER.pack(KEAE_MAGIC, KEAE_VERSION, n, l_c) + H_c.astype("<f4").tobytes(order="C")


def write_precomputed(path: str | Path, H_c: np.ndarray) -> int:
    payload = keae_bytes(H_c)
    Path(path).write_bytes(payload)
    return len(payload)


def parse_keae(buf: bytes) -> np.ndarray:
    if len(buf) < _KEAE_HEADER.size:
        raise FormatError(f"header needs {_KEAE_HEADER.size} bytes, file has {len(buf)}", len(buf))
    magic, version, n, l_c = _KEAE_HEADER.unpack_from(buf)
    if magic != KEAE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {KEAE_MAGIC!r}", 0)
    if version != KEAE_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if n == 0:
        raise FormatError("N must be positive", 8)
    if l_c == 0:
        raise FormatError("l_c must be positive", 12)
    expected = _KEAE_HEADER.size + 4 * n * l_c
    if len(buf) < expected:
        raise FormatError(f"payload truncated: need {expected} bytes, have {len(buf)}", len(buf))
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after payload", expected)
    return np.frombuffer(buf, dtype="<f4", count=n * l_c, offset=_KEAE_HEADER.size).reshape(n, l_c)


def load_precomputed(path: str | Path) -> ContextualEncoding:
    """Read a KEAE file; the stored binary32 values are widened exactly to float64."""
    rows = parse_keae(Path(path).read_bytes())
    return ContextualEncoding(Tensor(rows.astype(np.float64)), trainable=False)
