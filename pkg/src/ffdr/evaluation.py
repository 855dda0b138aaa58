"""TREC-style evaluation: nDCG, Q-measure, nERR and iRBU at a cutoff, plus
the randomized Tukey HSD test over per-topic scores."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

METRICS = ("ndcg", "q", "nerr", "irbu")
IRBU_PERSISTENCE = 0.99
# effort weight of the rank-biased-utility family; 0 keeps iRBU in [0, 1]
IRBU_EFFORT = 0.0


class EvalFormatError(ValueError):
    pass


@dataclass
class Qrels:
    judgments: dict[str, dict[str, int]]

    @property
    def max_grade(self) -> int:
        return max((g for docs in self.judgments.values() for g in docs.values()), default=0)

    def relevant(self, topic: str) -> dict[str, int]:
        return {d: g for d, g in self.judgments.get(topic, {}).items() if g > 0}


@dataclass
class Run:
    rankings: dict[str, list[tuple[str, float]]]
    tag: str = "run"

    def doc_ids(self, topic: str) -> list[str]:
        return [d for d, _ in self.rankings.get(topic, [])]


@dataclass
class MetricResult:
    metric: str
    k: int
    per_topic: dict[str, float]
    mean: float
    excluded: list[str] = field(default_factory=list)


def parse_qrels(path: str | Path) -> Qrels:
    judgments: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise EvalFormatError(f"{path}:{lineno}: expected 'topic 0 docid grade'")
            topic, _, doc, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise EvalFormatError(f"{path}:{lineno}: grade {grade!r} is not an integer") from None
            if g < 0:
                raise EvalFormatError(f"{path}:{lineno}: negative grade {g}")
            docs = judgments.setdefault(topic, {})
            if doc in docs:
                raise EvalFormatError(f"{path}:{lineno}: duplicate judgment for ({topic}, {doc})")
            docs[doc] = g
    return Qrels(judgments)


def parse_run(path: str | Path) -> Run:
    rankings: dict[str, list[tuple[str, float]]] = {}
    seen: dict[str, set[str]] = {}
    tag = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise EvalFormatError(f"{path}:{lineno}: expected 'topic Q0 docid rank score tag'")
            topic, _, doc, _rank, sc, tag = parts
            try:
                s = float(sc)
            except ValueError:
                raise EvalFormatError(f"{path}:{lineno}: score {sc!r} is not a number") from None
            if doc in seen.setdefault(topic, set()):
                raise EvalFormatError(f"{path}:{lineno}: document {doc} repeated in topic {topic}")
            seen[topic].add(doc)
            rankings.setdefault(topic, []).append((doc, s))
    for topic in rankings:
        rankings[topic].sort(key=lambda ds: (-ds[1], ds[0]))
    return Run(rankings, tag or "run")


def write_run(run: Run, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for topic in sorted(run.rankings):
            for rank, (doc, s) in enumerate(run.rankings[topic], 1):
                fh.write(f"{topic} Q0 {doc} {rank} {s:.10g} {run.tag}\n")


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for topic in sorted(qrels.judgments):
            for doc, g in sorted(qrels.judgments[topic].items()):
                fh.write(f"{topic} 0 {doc} {g}\n")


def _grades(judged: Mapping[str, int], ranking: Sequence[str], k: int) -> list[int]:
    return [judged.get(d, 0) for d in ranking[:k]]


def _ideal(judged: Mapping[str, int]) -> list[int]:
    return sorted((g for g in judged.values() if g > 0), reverse=True)


def ndcg_at_k(judged: Mapping[str, int], ranking: Sequence[str], k: int) -> float:
    """Exponential-gain nDCG@k; NaN when the topic has no relevant document."""
    def dcg(grades):
        return sum((2 ** g - 1) / math.log2(r + 1) for r, g in enumerate(grades, 1))

    ideal = dcg(_ideal(judged)[:k])
    if ideal == 0:
        return math.nan
    return dcg(_grades(judged, ranking, k)) / ideal


def q_measure_at_k(judged: Mapping[str, int], ranking: Sequence[str], k: int, beta: float = 1.0) -> float:
    """Q-measure@k with linear gains and blended ratio weight ``beta``."""
    ideal = _ideal(judged)
    R = len(ideal)
    if R == 0:
        return math.nan
    total = 0.0
    count = cg = ideal_cg = 0.0
    for r, g in enumerate(_grades(judged, ranking, k), 1):
        if r <= R:
            ideal_cg += ideal[r - 1]
        if g > 0:
            count += 1
            cg += g
            total += (count + beta * cg) / (r + beta * ideal_cg)
    return total / min(R, k)


def _stop_probs(grades: Iterable[int], max_grade: int) -> list[float]:
    scale = 2.0 ** max_grade
    return [(2.0 ** g - 1) / scale for g in grades]


def _err(probs: Sequence[float]) -> float:
    total, keep_going = 0.0, 1.0
    for r, p in enumerate(probs, 1):
        total += keep_going * p / r
        keep_going *= 1.0 - p
    return total


def nerr_at_k(judged: Mapping[str, int], ranking: Sequence[str], k: int, max_grade: Optional[int] = None) -> float:
    """ERR@k over the ideal ERR@k; stop probabilities use ``max_grade``."""
    ideal = _ideal(judged)
    if not ideal:
        return math.nan
    max_grade = ideal[0] if max_grade is None else max_grade
    denom = _err(_stop_probs(ideal[:k], max_grade))
    return _err(_stop_probs(_grades(judged, ranking, k), max_grade)) / denom


def irbu_at_k(
    judged: Mapping[str, int],
    ranking: Sequence[str],
    k: int,
    p: float = IRBU_PERSISTENCE,
    max_grade: Optional[int] = None,
    effort: float = IRBU_EFFORT,
) -> float:
    """Single-intent rank-biased utility.

    ``sum_r p^r * R_r * prod_{i<r}(1 - R_i) - effort * sum_r p^r`` with the
    same stop probabilities ``R_r`` as nERR, clipped to [0, 1].
    """
    if not 0 < p < 1:
        raise ValueError("persistence p must lie in (0, 1)")
    ideal = _ideal(judged)
    if not ideal:
        return math.nan
    max_grade = ideal[0] if max_grade is None else max_grade
    grades = _grades(judged, ranking, k)
    utility, keep_going = 0.0, 1.0
    for r, stop in enumerate(_stop_probs(grades, max_grade), 1):
        utility += p ** r * stop * keep_going
        keep_going *= 1.0 - stop
    utility -= effort * sum(p ** r for r in range(1, len(grades) + 1))
    return min(max(utility, 0.0), 1.0)


def metric_fn(name: str):
    try:
        return {"ndcg": ndcg_at_k, "q": q_measure_at_k, "nerr": nerr_at_k, "irbu": irbu_at_k}[name]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; choose from {METRICS}") from None


def evaluate_run(qrels: Qrels, run: Run, metrics: Sequence[str] = METRICS, k: int = 10) -> dict[str, MetricResult]:
    """Per-topic and mean scores over the topics judged in ``qrels``.

    Topics missing from the run score 0; topics without any relevant
    document are left out of the mean and listed in ``excluded``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not set(qrels.judgments) & set(run.rankings):
        raise ValueError("run and qrels share no topics")
    max_grade = qrels.max_grade
    results = {}
    for name in metrics:
        fn = metric_fn(name)
        per_topic, excluded = {}, []
        for topic in sorted(qrels.judgments):
            judged = qrels.judgments[topic]
            if not any(g > 0 for g in judged.values()):
                excluded.append(topic)
                continue
            ranking = run.doc_ids(topic)
            if name in ("nerr", "irbu"):
                per_topic[topic] = fn(judged, ranking, k, max_grade=max_grade)
            else:
                per_topic[topic] = fn(judged, ranking, k)
        mean = float(np.mean(list(per_topic.values()))) if per_topic else math.nan
        results[name] = MetricResult(name, k, per_topic, mean, excluded)
    return results


def metric_label(name: str, k: int) -> str:
    return {"ndcg": "nDCG", "q": "Q", "nerr": "nERR", "irbu": "iRBU"}[name] + f"@{k:04d}"


def write_per_topic_csv(results: Mapping[str, MetricResult], path: str | Path) -> None:
    names = list(results)
    topics = sorted({t for r in results.values() for t in r.per_topic})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["topic", *(metric_label(n, results[n].k) for n in names)])
        for t in topics:
            w.writerow([t, *(f"{results[n].per_topic[t]:.6f}" for n in names)])


def write_summary_csv(rows: Sequence[tuple[str, Mapping[str, MetricResult]]], path: str | Path) -> None:
    """One row per labelled run: means plus the count of excluded topics."""
    if not rows:
        raise ValueError("nothing to summarise")
    names = list(rows[0][1])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", *(metric_label(n, rows[0][1][n].k) for n in names), "topics", "excluded"])
        for label, res in rows:
            first = res[names[0]]
            w.writerow([label, *(f"{res[n].mean:.6f}" for n in names), len(first.per_topic), len(first.excluded)])


def randomized_tukey_hsd(scores, B: int = 5000, seed: int = 0) -> np.ndarray:
    """Pairwise p-values from the randomised Tukey HSD test.

    ``scores`` is a runs x topics matrix.  Each round shuffles the run
    labels independently within every topic and records the largest
    difference between any two run means.
    """
    X = np.asarray(scores, dtype=float)
    if X.ndim != 2:
        raise ValueError("scores must be a runs x topics matrix")
    n_runs, n_topics = X.shape
    if n_runs < 2 or n_topics < 2:
        raise ValueError("need at least two runs and two topics")
    if B < 1:
        raise ValueError("B must be >= 1")
    means = X.mean(axis=1)
    observed = np.abs(means[:, None] - means[None, :])
    # ties in the permutation statistic must not hinge on rounding noise
    slack = 1e-12 * max(1.0, float(np.abs(X).max()))
    rng = np.random.default_rng(seed)
    exceed = np.zeros_like(observed)
    for _ in range(B):
        perm_means = rng.permuted(X, axis=0).mean(axis=1)
        stat = perm_means.max() - perm_means.min()
        exceed += stat >= observed - slack
    p = (exceed + 1.0) / (B + 1.0)
    np.fill_diagonal(p, 1.0)
    return p


def write_hsd_csv(labels: Sequence[str], p: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *labels])
        for label, row in zip(labels, p):
            w.writerow([label, *(f"{x:.4f}" for x in row)])
