"""Grid over positive and negative sampling methods on one synthetic benchmark.

Writes one summary row per (pos_method, neg_method) plus the bm25 and direct
baselines, then randomized Tukey HSD p-values on nDCG over all of them.

    python scripts/compare_methods.py --out-dir results/methods
"""

import argparse
import dataclasses
import sys
import tempfile
from pathlib import Path

from ffdr.config import load_config
from ffdr.corpus import load_corpus, load_queries
from ffdr.evaluation import evaluate_run, parse_qrels, randomized_tukey_hsd, write_hsd_csv, write_run, write_summary_csv
from ffdr.pipeline import adapt, generate_pairs, search, train_general
from ffdr.sampler import NEG_METHODS, POS_METHODS, parse_pairs
from ffdr.synth import synth_benchmark


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out-dir", default="results/methods")
    args = ap.parse_args()
    cfg = load_config(args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        paths = synth_benchmark(cfg.synth, tmp)
        docs, aug = load_corpus(paths["corpus"]), load_corpus(paths["aug_corpus"])
        stage1_docs = load_corpus(paths["stage1_corpus"])
        queries, aug_queries = load_queries(paths["queries"]), load_queries(paths["aug_queries"])
        qrels, stage1_pairs = parse_qrels(paths["qrels"]), parse_pairs(paths["stage1_pairs"])

    general = train_general([stage1_docs, docs, aug], stage1_pairs, stage1_docs, cfg.model, cfg.stage1).model
    runs = {"bm25": search("bm25", queries, docs), "direct": search("direct", queries, docs, general)}
    for pos in POS_METHODS:
        for neg in NEG_METHODS:
            sampler = dataclasses.replace(cfg.sampler, pos_method=pos, neg_method=neg)
            pairs, _ = generate_pairs(aug, sampler, aug_queries, general, cfg.extract, cfg.bm25)
            model = adapt(general, pairs, aug, cfg.stage2, cfg.model.seed).model
            runs[f"{pos}+{neg}"] = search("adapted", queries, docs, model, tag=f"{pos}+{neg}")
            print(f"done {pos}+{neg}", file=sys.stderr)

    rows = [(label, evaluate_run(qrels, run, cfg.eval.metrics, cfg.eval.k)) for label, run in runs.items()]
    for label, run in runs.items():
        write_run(run, out / f"{label}.run")
    write_summary_csv(rows, out / "summary.csv")
    topics = sorted(rows[0][1]["ndcg"].per_topic)
    matrix = [[res["ndcg"].per_topic[t] for t in topics] for _, res in rows]
    write_hsd_csv([label for label, _ in rows], randomized_tukey_hsd(matrix, cfg.hsd.B, cfg.hsd.seed),
                  out / "hsd_ndcg.csv")
    print((out / "summary.csv").read_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
