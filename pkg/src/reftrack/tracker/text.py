"""Toy text encoders: a trainable word embedder plus a frozen reference
embedder standing in for a pretrained text tower.

The frozen embedder draws one vector per vocabulary word from a seeded
Gaussian and orthonormalizes them, so identical text always encodes
identically and nothing about it ever trains; alignment to it has to be
learned by the linear map in the correlation head.
"""

from __future__ import annotations

import numpy as np

from ..nncore import Parameters, Tensor, add, embedding_lookup
from ..promptlang import tokenize


class VocabularyError(ValueError):
    pass


class TrainableTextEmbedder:
    """Word-id lookup plus learned positional term; parameters train."""

    def __init__(self, vocab: list[str], dim: int, params: Parameters,
                 rng: np.random.Generator, max_len: int = 32,
                 prefix: str = "text"):
        self.vocab = list(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.max_len = max_len
        scale = 1.0 / np.sqrt(dim)
        self.table = params.register(
            f"{prefix}.words", Tensor(rng.standard_normal((len(vocab), dim)) * scale))
        self.pos = params.register(
            f"{prefix}.pos", Tensor(rng.standard_normal((max_len, dim)) * scale))

    def ids(self, text: str) -> np.ndarray:
        words = tokenize(text)
        if not words:
            raise VocabularyError("empty prompt text")
        if len(words) > self.max_len:
            raise VocabularyError(f"prompt longer than {self.max_len} words")
        try:
            return np.array([self.index[w] for w in words], dtype=np.int64)
        except KeyError as exc:
            raise VocabularyError(f"word {exc.args[0]!r} not in vocabulary")

    def encode(self, text: str) -> Tensor:
        ids = self.ids(text)
        return add(embedding_lookup(self.table, ids),
                   embedding_lookup(self.pos, np.arange(len(ids))))


class FrozenTextEmbedder:
    """Deterministic seeded embedder; one orthonormal vector per word."""

    def __init__(self, vocab: list[str], dim: int, seed: int = 1234):
        if len(vocab) > dim:
            raise VocabularyError(
                f"frozen embedder needs dim >= vocab size ({len(vocab)} > {dim})")
        self.vocab = list(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.dim = dim
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((dim, len(vocab))))
        self.table = q.T.copy()    # (V, dim), orthonormal rows

    def encode(self, text: str) -> np.ndarray:
        words = tokenize(text)
        if not words:
            raise VocabularyError("empty prompt text")
        try:
            return self.table[[self.index[w] for w in words]]
        except KeyError as exc:
            raise VocabularyError(f"word {exc.args[0]!r} not in vocabulary")
