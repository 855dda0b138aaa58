"""Seeded end-to-end experiments on the synthetic benchmark."""

from __future__ import annotations

import dataclasses
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .config import PipelineConfig
from .corpus import load_corpus, load_queries
from .evaluation import evaluate_run, parse_qrels
from .pipeline import adapt, generate_pairs, search, train_general
from .sampler import parse_pairs
from .synth import synth_benchmark


@dataclass
class SeedOutcome:
    seed: int
    means: dict[str, float]  # search mode -> mean nDCG@k
    seconds: float
    stage1_trace: list[float] = field(default_factory=list)
    stage2_trace: list[float] = field(default_factory=list)

    @property
    def adapted_wins(self) -> bool:
        return self.means["adapted"] >= self.means["direct"]


def reseed(config: PipelineConfig, seed: int) -> PipelineConfig:
    """Same config with every seed set to ``seed``."""
    r = dataclasses.replace
    return r(
        config,
        synth=r(config.synth, seed=seed),
        sampler=r(config.sampler, seed=seed),
        model=r(config.model, seed=seed),
        stage1=r(config.stage1, seed=seed),
        stage2=r(config.stage2, seed=seed),
    )


def two_stage_once(config: PipelineConfig, work_dir: Optional[str | Path] = None, metric: str = "ndcg") -> SeedOutcome:
    """Generate the benchmark, train both stages and score bm25, direct and adapted search."""
    start = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        paths = synth_benchmark(config.synth, work_dir or tmp)
        load = lambda role: load_corpus(paths[role], config.corpus)  # noqa: E731
        docs, aug_docs, stage1_docs = load("corpus"), load("aug_corpus"), load("stage1_corpus")
        queries = load_queries(paths["queries"], config.corpus)
        aug_queries = load_queries(paths["aug_queries"], config.corpus)
        qrels = parse_qrels(paths["qrels"])
        stage1_pairs = parse_pairs(paths["stage1_pairs"])

    general = train_general([stage1_docs, docs, aug_docs], stage1_pairs, stage1_docs, config.model, config.stage1)
    pairs, _ = generate_pairs(
        aug_docs, config.sampler, aug_queries, general.model, config.extract, config.bm25,
        config.corpus.query_max_tokens,
    )
    adapted = adapt(general.model, pairs, aug_docs, config.stage2, config.model.seed)
    means = {}
    for mode, model in (("bm25", None), ("direct", general.model), ("adapted", adapted.model)):
        run = search(mode, queries, docs, model, config.eval.k, config.bm25)
        means[mode] = evaluate_run(qrels, run, [metric], config.eval.k)[metric].mean
    return SeedOutcome(config.synth.seed, means, time.perf_counter() - start, general.loss_trace, adapted.loss_trace)


def directional(config: PipelineConfig = PipelineConfig(), seeds: Sequence[int] = range(5)) -> list[SeedOutcome]:
    return [two_stage_once(reseed(config, s)) for s in seeds]
