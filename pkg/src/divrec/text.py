"""Tokenization, vocabulary, word vectors and title similarity."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_WORD = re.compile(r"\w+")


def split_words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


class Vocab:
    """Token <-> id map with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.stoi: dict[str, int] = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocab":
        counts = Counter(tok for text in texts for tok in split_words(text))
        ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(ranked)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def save(self, path) -> None:
        Path(path).write_text("".join(tok + "\n" for tok in self.itos[2:]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)


def tokenize(text: str, vocab: Vocab, max_len: int) -> list[int]:
    ids = [vocab.id(tok) for tok in split_words(text)[:max_len]]
    return ids + [PAD] * (max_len - len(ids))


@dataclass
class EmbeddingTable:
    vectors: np.ndarray  # (vocab size, dim); row PAD is zero
    trainable: bool = True

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


def load_embeddings(path, vocab: Vocab, dim: int | None = None, seed: int = 0, std: float = 0.1) -> EmbeddingTable:
    """Read a ``word v1 ... vD`` text file into a table aligned with ``vocab``.

    Words absent from the file get N(0, std^2) vectors from a seeded
    generator; PAD stays zero.  ``dim`` is needed only when the file is
    empty (defaults to 300 then).
    """
    found: dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if not parts or parts == [""]:
                continue
            width = len(parts) - 1
            if dim is None:
                dim = width
            if width != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, found {width}")
            idx = vocab.stoi.get(parts[0])
            if idx is None or idx == PAD:
                continue
            try:
                found[idx] = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric vector entry") from None
    if dim is None:
        dim = 300
    return _assemble(found, len(vocab), dim, seed, std)


def table_from_vectors(word_vectors, vocab: Vocab, seed: int = 0, std: float = 0.1) -> EmbeddingTable:
    """Same as :func:`load_embeddings` for vectors already in memory (word -> array)."""
    dim = len(next(iter(word_vectors.values())))
    found = {vocab.stoi[w]: np.asarray(v, dtype=np.float64) for w, v in word_vectors.items()
             if w in vocab.stoi and vocab.stoi[w] != PAD}
    return _assemble(found, len(vocab), dim, seed, std)


def _assemble(found: dict[int, np.ndarray], size: int, dim: int, seed: int, std: float) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    vectors = rng.normal(0.0, std, size=(size, dim))
    for idx, vec in found.items():
        vectors[idx] = vec
    vectors[PAD] = 0.0
    return EmbeddingTable(vectors)


def random_embeddings(vocab: Vocab, dim: int, seed: int = 0, std: float = 0.1) -> EmbeddingTable:
    return _assemble({}, len(vocab), dim, seed, std)


def semantic_embedding(token_ids, table: EmbeddingTable) -> np.ndarray:
    """Mean word vector over the non-PAD tokens (zero for an all-PAD title)."""
    ids = np.asarray(token_ids)
    ids = ids[ids != PAD]
    if ids.size == 0:
        return np.zeros(table.dim)
    return table.vectors[ids].mean(axis=0)


def semantic_embeddings(token_matrix, table: EmbeddingTable) -> np.ndarray:
    ids = np.asarray(token_matrix)
    valid = (ids != PAD).astype(table.vectors.dtype)
    total = np.einsum("ml,mld->md", valid, table.vectors[ids])
    counts = valid.sum(axis=1, keepdims=True)
    return np.divide(total, counts, out=np.zeros_like(total), where=counts > 0)


def cosine_similarity_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; zero vectors are similar to nothing but themselves."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)
    s = unit @ unit.T
    s = 0.5 * (s + s.T)
    np.clip(s, -1.0, 1.0, out=s)
    np.fill_diagonal(s, 1.0)
    return s


def similarity_matrix(token_matrix, table: EmbeddingTable) -> np.ndarray:
    return cosine_similarity_matrix(semantic_embeddings(token_matrix, table))
