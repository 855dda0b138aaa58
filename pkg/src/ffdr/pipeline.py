"""In-memory building blocks of the two-stage pipeline.

Stage I trains the general ranker on labelled pairs; Stage II continues
training it on synthetic pairs built from the augmentation corpus; search
reranks BM25 candidates with either model or returns BM25 directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional, Sequence

from .corpus import Document, Query, StopwordSet, default_stopwords
from .embed import Embedder, HashEmbedder, TsvEmbedder, embed_keywords
from .evaluation import Run
from .extract import KeywordList, rake_keywords, textrank_keywords, tfidf_keywords
from .lexindex import InvertedIndex, bm25_search, build_index
from .ranker import MiniCoilModel, TrainConfig, TrainResult, extend_vocab, init_model, rerank, train
from .sampler import (
    SamplerConfig,
    TrainingInstance,
    assemble_dataset,
    prf_positives,
    pseudo_label_positives,
)

log = logging.getLogger(__name__)

SEARCH_MODES = ("bm25", "direct", "adapted")


@dataclass(frozen=True)
class ExtractConfig:
    window: int = 2
    damping: float = 0.85
    tol: float = 1e-6
    max_iter: int = 100
    ngram_max: int = 2
    embed_dim: int = 64
    embed_seed: int = 0
    embed_tsv: Optional[str] = None


@dataclass(frozen=True)
class ModelConfig:
    n_t: int = 32
    n_c: int = 32
    seed: int = 0


@dataclass(frozen=True)
class BM25Config:
    k1: float = 1.2
    b: float = 0.75
    depth: int = 1000


def doc_tokens(*corpora: Sequence[Document]) -> dict[str, tuple[str, ...]]:
    return {d.id: d.tokens for docs in corpora for d in docs}


def make_extractor(
    method: str,
    V: int,
    cfg: ExtractConfig = ExtractConfig(),
    index: Optional[InvertedIndex] = None,
    stopwords: Optional[StopwordSet] = None,
    embedder: Optional[Embedder] = None,
) -> Callable[[Document], KeywordList]:
    stopwords = default_stopwords() if stopwords is None else stopwords
    if method == "tfidf":
        if index is None:
            raise ValueError("tfidf extraction needs an index over the augmentation corpus")
        return partial(tfidf_keywords, index=index, V=V, stopwords=stopwords)
    if method == "textrank":
        return partial(
            textrank_keywords, V=V, window=cfg.window, damping=cfg.damping,
            tol=cfg.tol, max_iter=cfg.max_iter, stopwords=stopwords,
        )
    if method == "rake":
        return partial(rake_keywords, V=V, stopwords=stopwords)
    if method == "keybert":
        if embedder is None:
            embedder = TsvEmbedder.load(cfg.embed_tsv) if cfg.embed_tsv else HashEmbedder(cfg.embed_dim, cfg.embed_seed)
        return partial(embed_keywords, V=V, ngram_max=cfg.ngram_max, embedder=embedder, stopwords=stopwords)
    raise ValueError(f"unknown extraction method {method!r}")


def make_retriever(
    index: InvertedIndex,
    model: Optional[MiniCoilModel],
    docs: dict[str, Sequence[str]],
    depth: int = 1000,
) -> Callable[[Sequence[str]], list]:
    """BM25 top-``depth``, reranked by ``model`` when one is given."""
    def retrieve(query_tokens):
        cands = bm25_search(index, query_tokens, depth)
        if model is None:
            return cands
        return rerank(model, query_tokens, cands, depth, docs)
    return retrieve


def generate_pairs(
    aug_docs: Sequence[Document],
    config: SamplerConfig,
    aug_queries: Sequence[Query] = (),
    general_model: Optional[MiniCoilModel] = None,
    extract_cfg: ExtractConfig = ExtractConfig(),
    bm25: BM25Config = BM25Config(),
    query_max_tokens: int = 16,
    stopwords: Optional[StopwordSet] = None,
) -> tuple[list[TrainingInstance], dict]:
    """Synthetic Stage-II training set over the augmentation corpus."""
    index = build_index(aug_docs, bm25.k1, bm25.b)
    if config.pos_method == "pseudo_label":
        if not aug_queries:
            raise ValueError("pseudo_label positives need augmentation-corpus queries")
        retriever = make_retriever(index, general_model, doc_tokens(aug_docs), bm25.depth)
        positives = pseudo_label_positives(aug_queries, retriever, config.U)
        skipped = 0
    else:
        extractor = make_extractor(config.pos_method, config.V, extract_cfg, index, stopwords)
        positives, skipped = prf_positives(aug_docs, extractor, query_max_tokens)
    instances = assemble_dataset(positives, index.doc_ids, config, index)
    stats = {
        "positives": len(positives),
        "skipped": skipped,
        "short": sum(1 for inst in instances if inst.short),
    }
    log.info("generated %d instances (%d sources skipped)", len(instances), skipped)
    return instances, stats


def train_general(
    vocab_docs: Sequence[Sequence[Document]],
    pairs: Sequence[TrainingInstance],
    pair_docs: Sequence[Document],
    model_cfg: ModelConfig = ModelConfig(),
    train_cfg: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Stage I from scratch: vocabulary is the union of every corpus token."""
    vocab = (t for docs in vocab_docs for d in docs for t in d.tokens)
    vocab = [*vocab, *(t for inst in pairs for t in inst.query_tokens)]
    model = init_model(vocab, model_cfg.n_t, model_cfg.n_c, model_cfg.seed)
    return train(model, pairs, doc_tokens(pair_docs), train_cfg)


def adapt(
    model: MiniCoilModel,
    pairs: Sequence[TrainingInstance],
    aug_docs: Sequence[Document],
    train_cfg: TrainConfig = TrainConfig(),
    vocab_seed: int = 0,
) -> TrainResult:
    """Stage II: continue training on synthetic pairs from the augmentation corpus."""
    tokens = [t for d in aug_docs for t in d.tokens] + [t for inst in pairs for t in inst.query_tokens]
    model = extend_vocab(model, tokens, vocab_seed)
    return train(model, pairs, doc_tokens(aug_docs), train_cfg)


def search(
    mode: str,
    queries: Sequence[Query],
    docs: Sequence[Document],
    model: Optional[MiniCoilModel] = None,
    k: int = 1000,
    bm25: BM25Config = BM25Config(),
    index: Optional[InvertedIndex] = None,
    tag: Optional[str] = None,
) -> Run:
    if mode not in SEARCH_MODES:
        raise ValueError(f"unknown search mode {mode!r}; choose from {SEARCH_MODES}")
    if mode != "bm25" and model is None:
        raise ValueError(f"search mode {mode!r} needs a model")
    index = build_index(docs, bm25.k1, bm25.b) if index is None else index
    retrieve = make_retriever(index, None if mode == "bm25" else model, doc_tokens(docs), bm25.depth)
    rankings = {}
    for q in queries:
        rankings[q.id] = [(h.doc_id, h.score) for h in retrieve(q.tokens)[:k]]
    return Run(rankings, tag or mode)
