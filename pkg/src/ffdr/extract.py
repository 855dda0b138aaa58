"""Single-document keyword extraction: TF-IDF, TextRank and RAKE.

Each extractor returns a :class:`KeywordList` whose items are ordered by
descending score with ascending text as tie-break, so lists for growing
``V`` are prefixes of one another.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .corpus import Document, StopwordSet, default_stopwords
from .lexindex import InvertedIndex, idf

METHODS = ("tfidf", "textrank", "rake", "keybert")


@dataclass(frozen=True)
class KeywordList:
    items: tuple[tuple[str, float], ...]
    method: str
    source_doc: str

    @property
    def terms(self) -> list[str]:
        return [t for t, _ in self.items]

    def query_tokens(self, max_tokens: Optional[int] = None) -> list[str]:
        """Flatten phrases into tokens in score order."""
        tokens = [tok for term in self.terms for tok in term.split(" ")]
        return tokens if max_tokens is None else tokens[:max_tokens]

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class CooccurrenceGraph:
    nodes: list[str]
    edges: dict[tuple[str, str], int] = field(default_factory=dict)

    def weight(self, u: str, v: str) -> int:
        return self.edges.get((u, v) if u < v else (v, u), 0)

    def neighbours(self) -> dict[str, dict[str, int]]:
        adj: dict[str, dict[str, int]] = {n: {} for n in self.nodes}
        for (u, v), w in self.edges.items():
            adj[u][v] = w
            adj[v][u] = w
        return adj


def top_v(scores: dict[str, float], V: int) -> list[tuple[str, float]]:
    if V < 1:
        raise ValueError("V must be >= 1")
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:V]


def tfidf_keywords(
    doc: Document,
    index: InvertedIndex,
    V: int,
    stopwords: Optional[StopwordSet] = None,
) -> KeywordList:
    stopwords = default_stopwords() if stopwords is None else stopwords
    counts = Counter(t for t in doc.tokens if t not in stopwords)
    scores = {t: tf * idf(index, t) for t, tf in counts.items()}
    return KeywordList(tuple(top_v(scores, V)), "tfidf", doc.id)


def build_cooccurrence_graph(
    doc: Document, window: int = 2, stopwords: Optional[StopwordSet] = None
) -> CooccurrenceGraph:
    """Link candidate tokens that sit fewer than ``window`` positions apart.

    Positions refer to the original token sequence, so stopwords still take
    up room in the window even though they never become nodes.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    stopwords = default_stopwords() if stopwords is None else stopwords
    tokens = doc.tokens
    keep = [t not in stopwords for t in tokens]
    nodes = list(dict.fromkeys(t for t, k in zip(tokens, keep) if k))
    edges: dict[tuple[str, str], int] = {}
    for i, u in enumerate(tokens):
        if not keep[i]:
            continue
        for j in range(i + 1, min(i + window, len(tokens))):
            v = tokens[j]
            if not keep[j] or u == v:
                continue
            key = (u, v) if u < v else (v, u)
            edges[key] = edges.get(key, 0) + 1
    return CooccurrenceGraph(nodes, edges)


def pagerank(
    graph: CooccurrenceGraph,
    damping: float = 0.85,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> dict[str, float]:
    """Weighted PageRank on an undirected graph, started from uniform.

    Rank held by nodes without edges is spread over all nodes together with
    the teleport mass, so every iterate sums to one.
    """
    if not graph.nodes:
        raise ValueError("pagerank of an empty graph")
    if not 0 < damping < 1:
        raise ValueError("damping must lie in (0, 1)")
    nodes = sorted(graph.nodes)
    n = len(nodes)
    adj = graph.neighbours()
    wdeg = {u: sum(adj[u].values()) for u in nodes}
    if not graph.edges:
        return {u: 1.0 / n for u in nodes}
    p = {u: 1.0 / n for u in nodes}
    for _ in range(max_iter):
        dangling = sum(p[u] for u in nodes if wdeg[u] == 0)
        base = (1.0 - damping) / n + damping * dangling / n
        nxt = {}
        for u in nodes:
            acc = 0.0
            for v in sorted(adj[u]):
                acc += adj[u][v] / wdeg[v] * p[v]
            nxt[u] = base + damping * acc
        delta = sum(abs(nxt[u] - p[u]) for u in nodes)
        p = nxt
        if delta < tol:
            break
    total = sum(p.values())
    return {u: p[u] / total for u in nodes}


def textrank_keywords(
    doc: Document,
    V: int,
    window: int = 2,
    damping: float = 0.85,
    tol: float = 1e-6,
    max_iter: int = 100,
    stopwords: Optional[StopwordSet] = None,
) -> KeywordList:
    graph = build_cooccurrence_graph(doc, window, stopwords)
    if not graph.nodes:
        return KeywordList((), "textrank", doc.id)
    scores = pagerank(graph, damping, tol, max_iter)
    return KeywordList(tuple(top_v(scores, V)), "textrank", doc.id)


def rake_phrases(tokens, stopwords: StopwordSet) -> list[tuple[str, ...]]:
    """Maximal runs of non-stopword tokens, in document order."""
    phrases, run = [], []
    for tok in tokens:
        if tok in stopwords:
            if run:
                phrases.append(tuple(run))
            run = []
        else:
            run.append(tok)
    if run:
        phrases.append(tuple(run))
    return phrases


def rake_keywords(doc: Document, V: int, stopwords: Optional[StopwordSet] = None) -> KeywordList:
    stopwords = default_stopwords() if stopwords is None else stopwords
    phrases = rake_phrases(doc.tokens, stopwords)
    freq: Counter = Counter()
    deg: Counter = Counter()
    for phrase in phrases:
        for w in phrase:
            freq[w] += 1
            deg[w] += len(phrase)
    word_score = {w: deg[w] / freq[w] for w in freq}
    scores: dict[str, float] = {}
    for phrase in phrases:
        text = " ".join(phrase)
        if text not in scores:
            scores[text] = sum(word_score[w] for w in phrase)
    return KeywordList(tuple(top_v(scores, V)), "rake", doc.id)
