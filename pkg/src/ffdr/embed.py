"""Text embedders and embedding-similarity keyword extraction."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .corpus import Document, StopwordSet, default_stopwords
from .extract import KeywordList, rake_phrases, top_v


class Embedder(Protocol):
    dim: int

    def embed(self, tokens: Sequence[str]) -> np.ndarray: ...


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _pool(vectors: list[np.ndarray], dim: int) -> np.ndarray:
    if not vectors:
        return np.zeros(dim)
    total = np.sum(vectors, axis=0)
    norm = np.linalg.norm(total)
    return total / norm if norm > 0 else total


class HashEmbedder:
    """Seeded random unit vector per token; texts are L2-normalised sums.

    Token vectors come from a generator seeded with a SHA-256 digest of
    ``(seed, token)``, so they are stable across processes and platforms.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.sha256(f"{self.seed}\x00{token}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            vec.flags.writeable = False
            self._cache[token] = vec
        return vec

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        return _pool([self.token_vector(t) for t in tokens], self.dim)


class TsvEmbedder:
    """Token vectors read from ``token<TAB>f1 f2 ...``; unknown tokens are skipped."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self.vectors = vectors
        self.dim = dim

    @classmethod
    def load(cls, path: str | Path) -> "TsvEmbedder":
        vectors: dict[str, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\r\n")
                if not line:
                    continue
                if "\t" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'token<TAB>vector'")
                token, values = line.split("\t", 1)
                try:
                    vec = np.array([float(x) for x in values.split()])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric vector component") from None
                if dim is None:
                    dim = len(vec)
                if len(vec) != dim or dim == 0:
                    raise ValueError(f"{path}:{lineno}: expected {dim} components, got {len(vec)}")
                if not np.all(np.isfinite(vec)):
                    raise ValueError(f"{path}:{lineno}: non-finite vector component")
                vectors[token] = vec
        if dim is None:
            raise ValueError(f"{path}: no vectors")
        return cls(vectors, dim)

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        return _pool([self.vectors[t] for t in tokens if t in self.vectors], self.dim)


def ngram_candidates(tokens: Sequence[str], ngram_max: int, stopwords: StopwordSet) -> list[tuple[str, ...]]:
    """Contiguous n-grams (1..ngram_max) inside non-stopword runs, first-seen order."""
    seen: dict[tuple[str, ...], None] = {}
    for run in rake_phrases(tokens, stopwords):
        for n in range(1, ngram_max + 1):
            for i in range(len(run) - n + 1):
                seen.setdefault(run[i:i + n], None)
    return list(seen)


def embed_keywords(
    doc: Document,
    V: int,
    ngram_max: int = 2,
    embedder: Optional[Embedder] = None,
    stopwords: Optional[StopwordSet] = None,
) -> KeywordList:
    if ngram_max < 1:
        raise ValueError("ngram_max must be >= 1")
    embedder = HashEmbedder() if embedder is None else embedder
    stopwords = default_stopwords() if stopwords is None else stopwords
    doc_vec = embedder.embed(doc.tokens)
    scores = {
        " ".join(gram): cosine(embedder.embed(gram), doc_vec)
        for gram in ngram_candidates(doc.tokens, ngram_max, stopwords)
    }
    return KeywordList(tuple(top_v(scores, V)), "keybert", doc.id)
