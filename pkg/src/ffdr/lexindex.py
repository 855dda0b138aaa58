"""Okapi BM25 over an in-memory inverted index."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Document

SNAPSHOT_MAGIC = b"DLIX1\n"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float
    rank: int


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: list[int]
    doc_ids: list[str]
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        self.N = len(self.doc_ids)
        self.avgdl = sum(self.doc_lengths) / self.N if self.N else 0.0
        self.ordinal = {d: i for i, d in enumerate(self.doc_ids)}

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def tf(self, term: str, doc: int) -> int:
        for ordinal, tf in self.postings.get(term, ()):
            if ordinal == doc:
                return tf
        return 0


def build_index(docs: Sequence[Document], k1: float = 1.2, b: float = 0.75) -> InvertedIndex:
    if not docs:
        raise ValueError("cannot index an empty corpus")
    if k1 <= 0 or not 0 <= b <= 1:
        raise ValueError(f"invalid BM25 parameters k1={k1}, b={b}")
    postings: dict[str, list[tuple[int, int]]] = {}
    seen: set[str] = set()
    for ordinal, doc in enumerate(docs):
        if doc.id in seen:
            raise ValueError(f"duplicate document id {doc.id!r}")
        seen.add(doc.id)
        for term, tf in Counter(doc.tokens).items():
            postings.setdefault(term, []).append((ordinal, tf))
    return InvertedIndex(
        postings=postings,
        doc_lengths=[len(d.tokens) for d in docs],
        doc_ids=[d.id for d in docs],
        k1=k1,
        b=b,
    )


def idf(index: InvertedIndex, term: str) -> float:
    df = index.df(term)
    return math.log(1.0 + (index.N - df + 0.5) / (df + 0.5))


def _length_norm(index: InvertedIndex, dl: int) -> float:
    if index.avgdl == 0:
        return index.k1
    return index.k1 * (1.0 - index.b + index.b * dl / index.avgdl)


def bm25_score(index: InvertedIndex, query_tokens: Sequence[str], doc: int) -> float:
    if not 0 <= doc < index.N:
        raise IndexError(f"document ordinal {doc} out of range")
    norm = _length_norm(index, index.doc_lengths[doc])
    score = 0.0
    for term in dict.fromkeys(query_tokens):
        tf = index.tf(term, doc)
        if tf:
            score += idf(index, term) * tf * (index.k1 + 1.0) / (tf + norm)
    return score


def bm25_scores(index: InvertedIndex, query_tokens: Sequence[str]) -> np.ndarray:
    """Scores for every document, accumulated term-at-a-time over postings."""
    scores = np.zeros(index.N)
    lengths = np.asarray(index.doc_lengths, dtype=float)
    if index.avgdl == 0:
        norms = np.full(index.N, index.k1)
    else:
        norms = index.k1 * (1.0 - index.b + index.b * lengths / index.avgdl)
    for term in dict.fromkeys(query_tokens):
        plist = index.postings.get(term)
        if not plist:
            continue
        w = idf(index, term)
        ords = np.fromiter((p[0] for p in plist), dtype=np.int64, count=len(plist))
        tfs = np.fromiter((p[1] for p in plist), dtype=float, count=len(plist))
        scores[ords] += w * tfs * (index.k1 + 1.0) / (tfs + norms[ords])
    return scores


def rank_scores(doc_ids: Sequence[str], scores: Sequence[float], k: int) -> list[ScoredDoc]:
    """Sort by descending score, ascending doc id on ties, and keep ``k``."""
    order = sorted(range(len(doc_ids)), key=lambda i: (-scores[i], doc_ids[i]))[:k]
    return [ScoredDoc(doc_ids[i], float(scores[i]), r) for r, i in enumerate(order, 1)]


def bm25_search(index: InvertedIndex, query_tokens: Sequence[str], k: int) -> list[ScoredDoc]:
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = bm25_scores(index, query_tokens)
    hits = np.flatnonzero(scores > 0)
    return rank_scores([index.doc_ids[i] for i in hits], scores[hits].tolist(), k)


def save_index(index: InvertedIndex, path: str | Path) -> None:
    """Write ``DLIX1`` magic line followed by a UTF-8 JSON body.

    Body keys: ``version``, ``k1``, ``b``, ``doc_ids``, ``doc_lengths`` and
    ``postings`` (term -> flat [ordinal, tf, ordinal, tf, ...] list).
    """
    body = {
        "version": SNAPSHOT_VERSION,
        "k1": index.k1,
        "b": index.b,
        "doc_ids": index.doc_ids,
        "doc_lengths": index.doc_lengths,
        "postings": {t: [x for p in plist for x in p] for t, plist in sorted(index.postings.items())},
    }
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(json.dumps(body, separators=(",", ":")).encode("utf-8"))


def load_index(path: str | Path) -> InvertedIndex:
    raw = Path(path).read_bytes()
    if not raw.startswith(SNAPSHOT_MAGIC):
        raise ValueError(f"{path}: not a DLIX1 index snapshot")
    try:
        body = json.loads(raw[len(SNAPSHOT_MAGIC):].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt index snapshot ({exc})") from None
    if body.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported index snapshot version {body.get('version')!r}")
    postings = {t: list(zip(flat[0::2], flat[1::2])) for t, flat in body["postings"].items()}
    return InvertedIndex(postings, body["doc_lengths"], body["doc_ids"], body["k1"], body["b"])
