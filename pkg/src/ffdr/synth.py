"""Seeded two-domain synthetic retrieval benchmark.

Vocabulary comes in three layers: filler words shared by every corpus,
term clusters for the general (Stage-I) domain, and term clusters for the
target domain.  Target documents D and augmentation documents D* are drawn
from the same target clusters; only D carries queries with graded
judgments, and the general domain carries labelled training pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import write_corpus, write_queries
from .evaluation import Qrels, write_qrels
from .sampler import TrainingInstance, serialize_pairs

_ONSETS = "b c d f g h j k l m n p r s t v w z br cr dr fl gr kl pl pr sk st tr".split()
_VOWELS = "a e i o u ai ei ou".split()
_CODAS = ["", "", "n", "r", "s", "l", "x", "m"]

FILES = {
    "corpus": "corpus.jsonl",
    "queries": "queries.tsv",
    "qrels": "qrels.txt",
    "aug_corpus": "aug_corpus.jsonl",
    "aug_queries": "aug_queries.tsv",
    "stage1_corpus": "stage1_corpus.jsonl",
    "stage1_pairs": "stage1_pairs.jsonl",
}


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_docs: int = 200
    n_topics: int = 20
    n_aug_docs: int = 0  # 0 -> same as n_docs
    n_filler: int = 400
    terms_per_topic: int = 8
    n_general_topics: int = 30
    n_stage1_docs: int = 300
    stage1_queries_per_topic: int = 8
    negatives: int = 7

    def __post_init__(self):
        if self.n_docs < 50 or self.n_topics < 5:
            raise ValueError("synthetic benchmark needs n_docs >= 50 and n_topics >= 5")


def _words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        syl = int(rng.integers(2, 4))
        w = "".join(
            _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] + _CODAS[rng.integers(len(_CODAS))]
            for _ in range(syl)
        )
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


class _Generator:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        taken: set[str] = set()
        self.filler = _words(self.rng, cfg.n_filler, taken)
        ranks = np.arange(1, cfg.n_filler + 1)
        self.filler_p = (1.0 / ranks) / np.sum(1.0 / ranks)
        k = cfg.terms_per_topic
        self.topics = [_words(self.rng, k, taken) for _ in range(cfg.n_topics)]
        self.general = [_words(self.rng, k, taken) for _ in range(cfg.n_general_topics)]

    def filler_words(self, n: int) -> list[str]:
        return [self.filler[i] for i in self.rng.choice(len(self.filler), size=n, p=self.filler_p)]

    def document(self, clusters: list[list[str]]) -> tuple[str, dict[int, int]]:
        """Filler text with planted cluster terms; returns text and per-cluster planted counts."""
        rng = self.rng
        length = int(rng.integers(40, 100))
        words = self.filler_words(length)
        main = int(rng.integers(len(clusters)))
        n_main = int(rng.choice([1, 2, 3, 4, 5], p=[0.15, 0.2, 0.25, 0.2, 0.2]))
        planted = list(rng.choice(clusters[main], size=n_main, replace=False))
        if rng.random() < 0.5:
            other = int(rng.integers(len(clusters)))
            planted.append(clusters[other][int(rng.integers(len(clusters[other])))])
        for term in planted:
            for _ in range(int(rng.integers(1, 4))):
                words.insert(int(rng.integers(len(words) + 1)), term)
        counts = {}
        present = set(words)
        for c, terms in enumerate(clusters):
            n = sum(1 for t in terms if t in present)
            if n:
                counts[c] = n
        return " ".join(words), counts

    def query(self, terms: list[str]) -> str:
        picks = list(self.rng.choice(terms, size=3, replace=False))
        return " ".join(picks + self.filler_words(2))


def _grade(planted: int) -> int:
    return 2 if planted >= 3 else 1 if planted >= 1 else 0


def synth_benchmark(cfg: SynthConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write the benchmark files into ``out_dir``; returns their paths by role."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gen = _Generator(cfg)
    paths = {role: out / name for role, name in FILES.items()}

    def corpus(prefix: str, n: int, clusters):
        docs, planted = [], []
        for i in range(n):
            text, counts = gen.document(clusters)
            docs.append((f"{prefix}{i:05d}", text))
            planted.append(counts)
        return docs, planted

    docs, planted = corpus("D", cfg.n_docs, gen.topics)
    judgments: dict[str, dict[str, int]] = {}
    for t in range(cfg.n_topics):
        qid = f"T{t:03d}"
        judged = {}
        for (doc_id, _), counts in zip(docs, planted):
            if t in counts:
                judged[doc_id] = _grade(counts[t])
        if not any(g == 2 for g in judged.values()):
            # construction guarantee: every topic owns at least one grade-2 document
            doc_id = f"D{len(docs):05d}"
            words = gen.filler_words(50) + list(gen.topics[t][:3]) * 2
            gen.rng.shuffle(words)
            docs.append((doc_id, " ".join(words)))
            planted.append({t: 3})
            judged[doc_id] = 2
        # a sprinkle of judged non-relevant documents, as in pooled judgments
        for doc_id, _ in docs:
            if gen.rng.random() < 0.05:
                judged.setdefault(doc_id, 0)
        judgments[qid] = judged
    queries = [(f"T{t:03d}", gen.query(gen.topics[t])) for t in range(cfg.n_topics)]

    n_aug = cfg.n_aug_docs or cfg.n_docs
    aug_docs, _ = corpus("A", n_aug, gen.topics)
    aug_queries = [(f"AQ{i:04d}", gen.query(gen.topics[i % cfg.n_topics])) for i in range(2 * cfg.n_topics)]

    s1_docs, s1_planted = corpus("G", cfg.n_stage1_docs, gen.general)
    instances = []
    for g in range(cfg.n_general_topics):
        for rep in range(cfg.stage1_queries_per_topic):
            qtext = gen.query(gen.general[g])
            positives = [d for (d, _), c in zip(s1_docs, s1_planted) if c.get(g, 0) >= 2]
            negatives_pool = [d for (d, _), c in zip(s1_docs, s1_planted) if g not in c]
            if not positives or len(negatives_pool) < cfg.negatives:
                continue
            pos = positives[int(gen.rng.integers(len(positives)))]
            negs = [negatives_pool[i] for i in gen.rng.choice(len(negatives_pool), cfg.negatives, replace=False)]
            instances.append(
                TrainingInstance(
                    qtext.split(),
                    pos,
                    negs,
                    {"pos_method": "labeled", "neg_method": "random", "source_id": f"GQ{g:03d}_{rep}",
                     "m": cfg.negatives, "short": False},
                )
            )

    write_corpus(docs, paths["corpus"])
    write_queries(queries, paths["queries"])
    write_qrels(Qrels(judgments), paths["qrels"])
    write_corpus(aug_docs, paths["aug_corpus"])
    write_queries(aug_queries, paths["aug_queries"])
    write_corpus(s1_docs, paths["stage1_corpus"])
    serialize_pairs(instances, paths["stage1_pairs"])
    return paths
