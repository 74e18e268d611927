"""Frozen caption encoder: closed-vocabulary tokenizer plus seeded random
embeddings with a pooled, unit-norm sentence vector.

The embedding table is derived deterministically from the vocabulary
contents, never trained; downstream models treat captions as fixed features.
The all-pad sequence pools to the zero vector, which doubles as the
unconditional token for guidance dropout.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .errors import DataError

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
MAX_TOKENS = 16
EMBED_DIM = 64

_WORD_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


def words(text: str) -> list[str]:
    """Lowercase word split on whitespace/punctuation."""
    return _WORD_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: list[str]):
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise DataError("vocabulary must start with the pad and unk tokens")
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary contains duplicate tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, texts) -> "Vocabulary":
        seen: dict[str, None] = {}
        for text in texts:
            for w in words(text):
                seen.setdefault(w)
        return cls([PAD_TOKEN, UNK_TOKEN] + sorted(seen))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.strip()]
        return cls(tokens)


def tokenize(caption: str, vocab: Vocabulary) -> np.ndarray:
    """Fixed-length id sequence: lowercase, split, truncate, pad."""
    ids = [vocab.index.get(w, UNK_ID) for w in words(caption)][:MAX_TOKENS]
    ids += [PAD_ID] * (MAX_TOKENS - len(ids))
    return np.array(ids, dtype=np.int64)


@dataclass
class TextEmbedding:
    pooled: np.ndarray  # [EMBED_DIM], unit norm; zero for the all-pad sequence
    token_matrix: np.ndarray  # [MAX_TOKENS, EMBED_DIM]


class TextEncoder:
    def __init__(self, vocab: Vocabulary, dim: int = EMBED_DIM):
        self.vocab = vocab
        self.dim = dim
        digest = hashlib.sha256("\n".join(vocab.tokens).encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        table = rng.standard_normal((len(vocab), dim))
        table[PAD_ID] = 0.0
        self.table = table

    def embed_ids(self, token_ids: np.ndarray) -> TextEmbedding:
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.shape != (MAX_TOKENS,):
            raise DataError(f"expected {MAX_TOKENS} token ids, got {token_ids.shape}")
        mat = self.table[token_ids]
        live = token_ids != PAD_ID
        if not live.any():
            return TextEmbedding(np.zeros(self.dim), mat)
        pooled = mat[live].mean(axis=0)
        norm = np.linalg.norm(pooled)
        if norm < 1e-12:
            return TextEmbedding(np.zeros(self.dim), mat)
        return TextEmbedding(pooled / norm, mat)

    def embed(self, caption: str) -> TextEmbedding:
        return self.embed_ids(tokenize(caption, self.vocab))

    def null_embedding(self) -> TextEmbedding:
        return TextEmbedding(
            np.zeros(self.dim), np.zeros((MAX_TOKENS, self.dim))
        )

    def embed_batch(self, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Token matrices and pooled vectors for an [N, MAX_TOKENS] id batch."""
        ids = np.asarray(ids, dtype=np.int64)
        mats = self.table[ids]  # [N, L, D]
        live = (ids != PAD_ID)[..., None]
        counts = np.maximum(live.sum(axis=1), 1)
        pooled = (mats * live).sum(axis=1) / counts
        norms = np.linalg.norm(pooled, axis=-1, keepdims=True)
        pooled = np.where(norms > 1e-12, pooled / np.maximum(norms, 1e-300), 0.0)
        return mats, pooled
