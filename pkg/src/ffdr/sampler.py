"""Synthetic Stage-II training data: positive pairs plus sampled negatives."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .corpus import Document, Query
from .extract import KeywordList
from .lexindex import InvertedIndex, bm25_search

POS_METHODS = ("pseudo_label", "tfidf", "textrank", "rake", "keybert")
NEG_METHODS = ("random", "bm25")
BM25_NEG_MODES = ("after_top", "tail")
NEG_DEPTH = 1000


@dataclass(frozen=True)
class SamplerConfig:
    U: int = 5
    V: int = 5
    m: int = 7
    pos_method: str = "textrank"
    neg_method: str = "random"
    bm25_neg_mode: str = "after_top"
    seed: int = 0

    def __post_init__(self):
        if min(self.U, self.V, self.m) < 1:
            raise ValueError("U, V and m must all be >= 1")
        if self.pos_method not in POS_METHODS:
            raise ValueError(f"unknown pos_method {self.pos_method!r}; choose from {POS_METHODS}")
        if self.neg_method not in NEG_METHODS:
            raise ValueError(f"unknown neg_method {self.neg_method!r}; choose from {NEG_METHODS}")
        if self.bm25_neg_mode not in BM25_NEG_MODES:
            raise ValueError(f"unknown bm25_neg_mode {self.bm25_neg_mode!r}; choose from {BM25_NEG_MODES}")


@dataclass(frozen=True)
class PositivePair:
    query_tokens: tuple[str, ...]
    doc_id: str
    source_id: str


@dataclass
class TrainingInstance:
    query_tokens: list[str]
    positive_doc: str
    negative_docs: list[str]
    provenance: dict = field(default_factory=dict)

    @property
    def short(self) -> bool:
        return bool(self.provenance.get("short", False))


class PairFileError(ValueError):
    pass


def keyed_rng(seed: int, key: str) -> np.random.Generator:
    """Generator that depends only on ``(seed, key)``, never on call order."""
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest[:8], "little")])


def pseudo_label_positives(
    queries: Sequence[Query],
    retriever: Callable[[Sequence[str]], Sequence],
    U: int,
) -> list[PositivePair]:
    """Top-``U`` retrieved documents of each query become its positives.

    ``retriever`` maps query tokens to a ranked list of doc ids or objects
    with a ``doc_id`` attribute.
    """
    pairs = []
    for q in queries:
        ranked = retriever(q.tokens)
        for hit in list(ranked)[:U]:
            doc_id = getattr(hit, "doc_id", hit)
            pairs.append(PositivePair(tuple(q.tokens), doc_id, q.id))
    return pairs


def prf_positives(
    docs: Sequence[Document],
    extractor: Callable[[Document], KeywordList],
    max_tokens: int = 16,
) -> tuple[list[PositivePair], int]:
    """One (keywords, doc) pair per document; returns ``(pairs, skipped)``."""
    pairs, skipped = [], 0
    for doc in docs:
        kw = extractor(doc)
        tokens = kw.query_tokens(max_tokens)
        if not tokens:
            skipped += 1
            continue
        pairs.append(PositivePair(tuple(tokens), doc.id, doc.id))
    return pairs, skipped


def random_negatives(
    corpus_ids: Sequence[str],
    m: int,
    exclude: Iterable[str],
    seed: int,
    instance_key: str,
) -> tuple[list[str], bool]:
    """Sample ``m`` ids without replacement; returns ``(ids, short)``."""
    excluded = set(exclude)
    pool = [d for d in corpus_ids if d not in excluded]
    if not pool:
        raise ValueError("no documents left to sample negatives from")
    rng = keyed_rng(seed, instance_key)
    take = min(m, len(pool))
    picks = rng.choice(len(pool), size=take, replace=False)
    return [pool[i] for i in picks], take < m


def bm25_negatives(
    index: InvertedIndex,
    query_tokens: Sequence[str],
    m: int,
    exclude: Iterable[str],
    mode: str = "after_top",
    U: int = 5,
    seed: int = 0,
    instance_key: str = "",
) -> tuple[list[str], bool]:
    excluded = set(exclude)
    ranked = [h.doc_id for h in bm25_search(index, query_tokens, max(NEG_DEPTH, U + m))]
    ranked = [d for d in ranked if d not in excluded]
    return select_bm25_negatives(ranked, index.doc_ids, m, excluded, mode, U, seed, instance_key)


def select_bm25_negatives(
    ranked: list[str],
    corpus_ids: Sequence[str],
    m: int,
    exclude: set[str],
    mode: str,
    U: int,
    seed: int,
    instance_key: str,
) -> tuple[list[str], bool]:
    """Slice an already-filtered ranking, padding randomly when it runs short."""
    if mode == "after_top":
        chosen = ranked[U:U + m]
    elif mode == "tail":
        chosen = ranked[-m:] if m <= len(ranked) else list(ranked)
    else:
        raise ValueError(f"unknown bm25_neg_mode {mode!r}")
    if len(chosen) == m:
        return chosen, False
    taken = exclude | set(chosen)
    if any(d not in taken for d in corpus_ids):
        pad, _ = random_negatives(corpus_ids, m - len(chosen), taken, seed, instance_key)
        chosen = chosen + pad
    return chosen, True


def assemble_dataset(
    positives: Sequence[PositivePair],
    corpus_ids: Sequence[str],
    config: SamplerConfig,
    index: Optional[InvertedIndex] = None,
) -> list[TrainingInstance]:
    if not positives:
        raise ValueError("no positive pairs to assemble")
    if config.neg_method == "bm25" and index is None:
        raise ValueError("bm25 negatives need an index over the augmentation corpus")
    instances = []
    for pair in positives:
        key = f"{pair.source_id}|{pair.doc_id}"
        if config.neg_method == "random":
            negs, short = random_negatives(corpus_ids, config.m, {pair.doc_id}, config.seed, key)
        else:
            negs, short = bm25_negatives(
                index, pair.query_tokens, config.m, {pair.doc_id},
                config.bm25_neg_mode, config.U, config.seed, key,
            )
        provenance = {
            "pos_method": config.pos_method,
            "neg_method": config.neg_method,
            "source_id": pair.source_id,
            "m": config.m,
            "short": short,
        }
        instances.append(TrainingInstance(list(pair.query_tokens), pair.doc_id, negs, provenance))
    return instances


def instance_to_json(inst: TrainingInstance) -> str:
    return json.dumps(
        {
            "query": list(inst.query_tokens),
            "positive": inst.positive_doc,
            "negatives": list(inst.negative_docs),
            "provenance": inst.provenance,
        },
        sort_keys=True,
        ensure_ascii=False,
    )


def serialize_pairs(instances: Iterable[TrainingInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(instance_to_json(inst) + "\n")


def parse_pairs(path: str | Path) -> list[TrainingInstance]:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                instances.append(_parse_instance(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise PairFileError(f"{path}:{lineno}: {exc}") from None
    return instances


def _parse_instance(obj: dict) -> TrainingInstance:
    query, positive, negatives = obj["query"], obj["positive"], obj["negatives"]
    provenance = obj.get("provenance", {})
    if not isinstance(query, list) or not all(isinstance(t, str) for t in query):
        raise ValueError("'query' must be an array of token strings")
    if not isinstance(positive, str):
        raise ValueError("'positive' must be a doc id string")
    if not isinstance(negatives, list) or not all(isinstance(d, str) for d in negatives):
        raise ValueError("'negatives' must be an array of doc id strings")
    if not isinstance(provenance, dict):
        raise ValueError("'provenance' must be an object")
    if positive in negatives:
        raise ValueError(f"positive {positive!r} repeated among negatives")
    if len(set(negatives)) != len(negatives):
        raise ValueError("duplicate negative ids")
    m = provenance.get("m")
    if m is not None and len(negatives) != m and not provenance.get("short", False):
        raise ValueError(f"expected {m} negatives, found {len(negatives)} without short flag")
    return TrainingInstance(query, positive, negatives, provenance)
