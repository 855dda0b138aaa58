"""Command-line entry point: ``ffdr <subcommand> [--config FILE] [flags]``.

Exit codes: 0 ok, 1 unknown subcommand, 2 config error, 3 input error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, load_config, override, require, to_toml
from .corpus import CorpusError, load_corpus, load_queries, load_stopwords
from .evaluation import (
    METRICS,
    EvalFormatError,
    Qrels,
    Run,
    evaluate_run,
    metric_label,
    parse_qrels,
    parse_run,
    randomized_tukey_hsd,
    write_hsd_csv,
    write_per_topic_csv,
    write_run,
    write_summary_csv,
)
from .lexindex import build_index, save_index
from .pipeline import adapt, generate_pairs, make_extractor, search, train_general
from .ranker import MiniCoilModel, TrainResult, load_model, save_model, vocab_coverage
from .sampler import PairFileError, TrainingInstance, parse_pairs, serialize_pairs
from .synth import FILES, synth_benchmark

log = logging.getLogger("ffdr")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2, 3, 4


class InvariantError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    path: str | Path,
    command: str,
    config: PipelineConfig,
    inputs: Sequence[Optional[str | Path]],
    outputs: Sequence[str | Path],
    extra: Optional[dict] = None,
) -> None:
    """Record everything needed to re-run ``command``; no wall-clock fields."""
    manifest = {
        "command": command,
        "version": __version__,
        "config_sha256": config.digest(),
        "config": config.to_dict(),
        "seeds": config.seeds(),
        "inputs": {str(p): file_digest(p) for p in inputs if p is not None and Path(p).is_file()},
        "outputs": {Path(p).name: file_digest(p) for p in outputs if Path(p).is_file()},
    }
    if extra:
        manifest["stats"] = extra
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def manifest_for(out: str | Path) -> Path:
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def check_instances(instances: Sequence[TrainingInstance], doc_ids: set[str]) -> None:
    for i, inst in enumerate(instances):
        if inst.positive_doc in inst.negative_docs:
            raise InvariantError(f"instance {i}: positive among its negatives")
        if len(set(inst.negative_docs)) != len(inst.negative_docs):
            raise InvariantError(f"instance {i}: duplicate negatives")
        missing = {inst.positive_doc, *inst.negative_docs} - doc_ids
        if missing:
            raise InvariantError(f"instance {i}: unknown doc ids {sorted(missing)}")


def check_run(run: Run) -> None:
    for topic, ranking in run.rankings.items():
        scores = [s for _, s in ranking]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise InvariantError(f"topic {topic}: scores not in descending order")


def _stopwords(config: PipelineConfig):
    return load_stopwords(config.paths.stopwords) if config.paths.stopwords else None


def _general_model(config: PipelineConfig) -> tuple[MiniCoilModel, list]:
    """Stage-I model from ``paths.model_in``, or trained from the Stage-I pair file."""
    if config.paths.model_in:
        require(config, "model_in")
        return load_model(config.paths.model_in), []
    require(config, "stage1_pairs", "stage1_corpus")
    stage1_docs = load_corpus(config.paths.stage1_corpus, config.corpus)
    vocab_docs = [stage1_docs]
    for name in ("corpus", "aug_corpus"):
        path = getattr(config.paths, name)
        if path and Path(path).exists():
            vocab_docs.append(load_corpus(path, config.corpus))
    result = train_general(vocab_docs, parse_pairs(config.paths.stage1_pairs), stage1_docs, config.model, config.stage1)
    return result.model, result.loss_trace


def _write_trace(trace: Sequence[float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(trace, 1):
            w.writerow([epoch, repr(float(loss))])


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


# ---------------------------------------------------------------- subcommands


def cmd_synth(config: PipelineConfig, args) -> int:
    out = Path(args.out)
    paths = synth_benchmark(config.synth, out)
    bench_cfg = dataclasses.replace(
        config,
        paths=dataclasses.replace(
            config.paths,
            **{role: name for role, name in FILES.items()},
            work_dir="runs",
        ),
    )
    (out / "config.toml").write_text(to_toml(bench_cfg), encoding="utf-8")
    write_manifest(out / "manifest.json", "synth", config, [], [*paths.values(), out / "config.toml"])
    print(f"wrote synthetic benchmark to {out} (config: {out / 'config.toml'})")
    return EXIT_OK


def cmd_index(config: PipelineConfig, args) -> int:
    require(config, "corpus")
    docs = load_corpus(config.paths.corpus, config.corpus)
    index = build_index(docs, config.bm25.k1, config.bm25.b)
    save_index(index, args.out)
    write_manifest(manifest_for(args.out), "index", config, [config.paths.corpus], [args.out],
                   {"documents": index.N, "terms": len(index.postings), "avgdl": index.avgdl})
    print(f"indexed {index.N} documents, {len(index.postings)} terms -> {args.out}")
    return EXIT_OK


def cmd_extract(config: PipelineConfig, args) -> int:
    require(config, "aug_corpus")
    docs = load_corpus(config.paths.aug_corpus, config.corpus)
    method = args.method or config.sampler.pos_method
    if method == "pseudo_label":
        raise ConfigError("extract needs a keyword method (tfidf, textrank, rake, keybert)")
    index = build_index(docs, config.bm25.k1, config.bm25.b)
    extractor = make_extractor(method, config.sampler.V, config.extract, index, _stopwords(config))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            kw = extractor(doc)
            fh.write(json.dumps({"doc": doc.id, "method": kw.method,
                                 "keywords": [[t, s] for t, s in kw.items]}, ensure_ascii=False) + "\n")
    write_manifest(manifest_for(args.out), "extract", config, [config.paths.aug_corpus], [args.out])
    return EXIT_OK


def cmd_genpairs(config: PipelineConfig, args) -> int:
    require(config, "aug_corpus")
    docs = load_corpus(config.paths.aug_corpus, config.corpus)
    queries = []
    model = None
    if config.sampler.pos_method == "pseudo_label":
        require(config, "aug_queries")
        queries = load_queries(config.paths.aug_queries, config.corpus)
        if config.paths.model_in:
            require(config, "model_in")
            model = load_model(config.paths.model_in)
        else:
            log.warning("no general ranker given; pseudo-labelling with BM25 alone")
    instances, stats = generate_pairs(
        docs, config.sampler, queries, model, config.extract, config.bm25,
        config.corpus.query_max_tokens, _stopwords(config),
    )
    check_instances(instances, {d.id for d in docs})
    serialize_pairs(instances, args.out)
    write_manifest(manifest_for(args.out), "genpairs", config,
                   [config.paths.aug_corpus, config.paths.aug_queries, config.paths.model_in], [args.out], stats)
    print(f"{len(instances)} instances -> {args.out} ({stats['skipped']} skipped, {stats['short']} short)")
    return EXIT_OK


def cmd_train(config: PipelineConfig, args) -> int:
    if config.paths.model_out is None:
        raise ConfigError("train needs an output model path (--out)")
    pairs_path = args.pairs
    if args.init or config.paths.model_in:
        # Stage II: continue from a general ranker on augmentation-corpus pairs
        model_in = args.init or config.paths.model_in
        docs_path = args.docs or config.paths.aug_corpus
        if pairs_path is None or docs_path is None:
            raise ConfigError("Stage-II training needs --pairs and --docs (or paths.aug_corpus)")
        docs = load_corpus(docs_path, config.corpus)
        result = adapt(load_model(model_in), parse_pairs(pairs_path), docs, config.stage2, config.model.seed)
        inputs = [model_in, pairs_path, docs_path]
    else:
        pairs_path = pairs_path or config.paths.stage1_pairs
        paths = dataclasses.replace(config.paths, stage1_pairs=pairs_path,
                                    stage1_corpus=args.docs or config.paths.stage1_corpus)
        config = dataclasses.replace(config, paths=paths)
        model, trace = _general_model(config)
        result = TrainResult(model, trace)
        inputs = [pairs_path, config.paths.stage1_corpus]
    save_model(result.model, config.paths.model_out)
    trace_path = args.trace or config.paths.model_out + ".trace.csv"
    _write_trace(result.loss_trace, trace_path)
    write_manifest(manifest_for(config.paths.model_out), "train", config, inputs,
                   [config.paths.model_out, trace_path], {"loss_trace": list(result.loss_trace)})
    print(f"model -> {config.paths.model_out}; loss trace -> {trace_path}")
    return EXIT_OK


def cmd_search(config: PipelineConfig, args) -> int:
    require(config, "corpus", "queries")
    docs = load_corpus(config.paths.corpus, config.corpus)
    queries = load_queries(config.paths.queries, config.corpus)
    model = None
    if args.mode != "bm25":
        require(config, "model_in")
        model = load_model(config.paths.model_in)
        vocab_coverage(model, [q.tokens for q in queries])
    run = search(args.mode, queries, docs, model, args.k, config.bm25, tag=args.tag or args.mode)
    check_run(run)
    write_run(run, args.out)
    write_manifest(manifest_for(args.out), "search", config,
                   [config.paths.corpus, config.paths.queries, config.paths.model_in if model else None], [args.out])
    return EXIT_OK


def _eval_runs(config: PipelineConfig, qrels: Qrels, run_paths: Sequence[str], out_dir: Path) -> list:
    rows = []
    for path in run_paths:
        run = parse_run(path)
        res = evaluate_run(qrels, run, config.eval.metrics, config.eval.k)
        label = Path(path).stem
        write_per_topic_csv(res, out_dir / f"{label}.per_topic.csv")
        rows.append((label, res))
    write_summary_csv(rows, out_dir / "summary.csv")
    return rows


def cmd_eval(config: PipelineConfig, args) -> int:
    require(config, "qrels")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    qrels = parse_qrels(config.paths.qrels)
    rows = _eval_runs(config, qrels, args.run, out_dir)
    for label, res in rows:
        first = next(iter(res.values()))
        means = "  ".join(f"{metric_label(n, r.k)}={r.mean:.4f}" for n, r in res.items())
        print(f"{label}: {means}  ({len(first.per_topic)} topics, {len(first.excluded)} without relevant docs)")
    write_manifest(out_dir / "manifest.json", "eval", config, [config.paths.qrels, *args.run],
                   sorted(out_dir.glob("*.csv")))
    return EXIT_OK


def hsd_matrix(config: PipelineConfig, qrels: Qrels, runs: Sequence[Run], metric: str) -> np.ndarray:
    per_run = [evaluate_run(qrels, run, [metric], config.eval.k)[metric].per_topic for run in runs]
    topics = sorted(per_run[0])
    return np.array([[scores[t] for t in topics] for scores in per_run])


def cmd_hsd(config: PipelineConfig, args) -> int:
    require(config, "qrels")
    if len(args.run) < 2:
        raise ConfigError("hsd needs at least two --run files")
    qrels = parse_qrels(config.paths.qrels)
    runs = [parse_run(p) for p in args.run]
    X = hsd_matrix(config, qrels, runs, args.metric)
    p = randomized_tukey_hsd(X, config.hsd.B, config.hsd.seed)
    labels = [Path(r).stem for r in args.run]
    write_hsd_csv(labels, p, args.out)
    write_manifest(manifest_for(args.out), "hsd", config, [config.paths.qrels, *args.run], [args.out])
    return EXIT_OK


def _stage2_eval(config, general, aug_docs, aug_queries, docs, queries, qrels, sampler_cfg, out_dir: Path, label: str):
    instances, stats = generate_pairs(
        aug_docs, sampler_cfg, aug_queries, general, config.extract, config.bm25,
        config.corpus.query_max_tokens, _stopwords(config),
    )
    check_instances(instances, {d.id for d in aug_docs})
    serialize_pairs(instances, out_dir / f"{label}.pairs.jsonl")
    adapted = adapt(general, instances, aug_docs, config.stage2, config.model.seed)
    save_model(adapted.model, out_dir / f"{label}.dlmc")
    _write_trace(adapted.loss_trace, out_dir / f"{label}.trace.csv")
    run = search("adapted", queries, docs, adapted.model, 1000, config.bm25, tag=label)
    check_run(run)
    write_run(run, out_dir / f"{label}.run")
    res = evaluate_run(qrels, run, config.eval.metrics, config.eval.k)
    write_per_topic_csv(res, out_dir / f"{label}.per_topic.csv")
    return res, run


def _load_all(config: PipelineConfig):
    require(config, "corpus", "queries", "qrels", "aug_corpus")
    docs = load_corpus(config.paths.corpus, config.corpus)
    queries = load_queries(config.paths.queries, config.corpus)
    qrels = parse_qrels(config.paths.qrels)
    aug_docs = load_corpus(config.paths.aug_corpus, config.corpus)
    aug_queries = []
    if config.paths.aug_queries and Path(config.paths.aug_queries).exists():
        aug_queries = load_queries(config.paths.aug_queries, config.corpus)
    return docs, queries, qrels, aug_docs, aug_queries


def _inputs(config: PipelineConfig) -> list:
    p = config.paths
    return [p.corpus, p.queries, p.qrels, p.aug_corpus, p.aug_queries, p.stage1_corpus, p.stage1_pairs, p.model_in]


def cmd_sweep(config: PipelineConfig, args) -> int:
    out_dir = Path(args.out_dir or Path(config.paths.work_dir) / "sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    docs, queries, qrels, aug_docs, aug_queries = _load_all(config)
    general, _ = _general_model(config)
    sweeps = [("U", config.sweep.U, config.sweep.U_pos_method), ("V", config.sweep.V, config.sweep.V_pos_method)]
    for param, values, pos_method in sweeps:
        rows = []
        for value in values:
            sampler_cfg = dataclasses.replace(config.sampler, pos_method=pos_method, **{param: value})
            label = f"{param}={value}"
            log.info("sweep %s (%s)", label, pos_method)
            res, _ = _stage2_eval(config, general, aug_docs, aug_queries, docs, queries, qrels,
                                  sampler_cfg, out_dir, label)
            rows.append((label, res))
        write_summary_csv(rows, out_dir / f"sweep_{param}.csv")
    write_manifest(out_dir / "manifest.json", "sweep", config, _inputs(config), sorted(out_dir.glob("sweep_*.csv")))
    print(f"sweep results -> {out_dir}")
    return EXIT_OK


def cmd_pipeline(config: PipelineConfig, args) -> int:
    """Stage I, pair generation, Stage II, all three search modes, eval and HSD."""
    out_dir = Path(args.out_dir or config.paths.work_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    docs, queries, qrels, aug_docs, aug_queries = _load_all(config)
    general, trace = _general_model(config)
    save_model(general, out_dir / "stage1.dlmc")
    _write_trace(trace, out_dir / "stage1.trace.csv")
    label = f"{config.sampler.pos_method}+{config.sampler.neg_method}"
    _stage2_eval(config, general, aug_docs, aug_queries, docs, queries, qrels, config.sampler, out_dir, label)
    for mode in ("bm25", "direct"):
        run = search(mode, queries, docs, general, 1000, config.bm25, tag=mode)
        check_run(run)
        write_run(run, out_dir / f"{mode}.run")
    run_paths = [str(out_dir / f"{name}.run") for name in ("bm25", "direct", label)]
    _eval_runs(config, qrels, run_paths, out_dir)
    runs = [parse_run(p) for p in run_paths]
    p = randomized_tukey_hsd(hsd_matrix(config, qrels, runs, "ndcg"), config.hsd.B, config.hsd.seed)
    write_hsd_csv([Path(r).stem for r in run_paths], p, out_dir / "hsd_ndcg.csv")
    write_manifest(out_dir / "manifest.json", "pipeline", config, _inputs(config),
                   sorted(f for f in out_dir.iterdir() if f.name != "manifest.json"))
    print((out_dir / "summary.csv").read_text(), end="")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "index": cmd_index,
    "extract": cmd_extract,
    "genpairs": cmd_genpairs,
    "train": cmd_train,
    "search": cmd_search,
    "eval": cmd_eval,
    "hsd": cmd_hsd,
    "sweep": cmd_sweep,
    "pipeline": cmd_pipeline,
}


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ffdr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="TOML config file (flags override it)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    def corpus_flags(p, *names):
        for name in names:
            p.add_argument(f"--{name.replace('_', '-')}", dest=f"paths.{name}")

    def sampler_flags(p):
        p.add_argument("--pos-method", dest="sampler.pos_method")
        p.add_argument("--neg-method", dest="sampler.neg_method")
        p.add_argument("--bm25-neg-mode", dest="sampler.bm25_neg_mode")
        p.add_argument("--U", type=int, dest="sampler.U")
        p.add_argument("--V", type=int, dest="sampler.V")
        p.add_argument("--m", type=int, dest="sampler.m")
        p.add_argument("--seed", type=int, dest="sampler.seed")

    p = add("synth", "write the seeded two-domain synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, dest="synth.seed")
    p.add_argument("--n-docs", type=int, dest="synth.n_docs")
    p.add_argument("--n-topics", type=int, dest="synth.n_topics")

    p = add("index", "build and snapshot a BM25 index")
    corpus_flags(p, "corpus")
    p.add_argument("--out", required=True)

    p = add("extract", "extract top-V keywords per augmentation document")
    corpus_flags(p, "aug_corpus", "stopwords")
    p.add_argument("--method", choices=["tfidf", "textrank", "rake", "keybert"])
    p.add_argument("--V", type=int, dest="sampler.V")
    p.add_argument("--out", required=True)

    p = add("genpairs", "generate Stage-II training pairs")
    corpus_flags(p, "aug_corpus", "aug_queries", "stopwords")
    sampler_flags(p)
    p.add_argument("--model", dest="paths.model_in", help="general ranker for pseudo-labelling")
    p.add_argument("--out", required=True)

    p = add("train", "train Stage I from scratch or Stage II from --init")
    corpus_flags(p, "stage1_corpus", "aug_corpus")
    p.add_argument("--pairs")
    p.add_argument("--docs", help="corpus the pair ids refer to")
    p.add_argument("--init", help="continue training this model (Stage II)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", dest="paths.model_out")
    p.add_argument("--trace", help="loss trace CSV (default: <out>.trace.csv)")

    p = add("search", "rank target-domain queries")
    corpus_flags(p, "corpus", "queries")
    p.add_argument("--mode", choices=["bm25", "direct", "adapted"], default="bm25")
    p.add_argument("--model", dest="paths.model_in")
    p.add_argument("--k", type=int, default=1000)
    p.add_argument("--tag")
    p.add_argument("--out", required=True)

    p = add("eval", "score runs against qrels")
    corpus_flags(p, "qrels")
    p.add_argument("--run", action="append", required=True)
    p.add_argument("--k", type=int, dest="eval.k")
    p.add_argument("--metrics", type=lambda s: tuple(s.split(",")), dest="eval.metrics")
    p.add_argument("--out-dir", required=True)

    p = add("hsd", "randomized Tukey HSD p-values between runs")
    corpus_flags(p, "qrels")
    p.add_argument("--run", action="append", required=True)
    p.add_argument("--metric", choices=list(METRICS), default="ndcg")
    p.add_argument("--k", type=int, dest="eval.k")
    p.add_argument("--B", type=int, dest="hsd.B")
    p.add_argument("--seed", type=int, dest="hsd.seed")
    p.add_argument("--out", required=True)

    p = add("sweep", "U and V oracle sweeps")
    p.add_argument("--U", type=_int_list, dest="sweep.U")
    p.add_argument("--V", type=_int_list, dest="sweep.V")
    p.add_argument("--out-dir")

    p = add("pipeline", "full two-stage pipeline with baselines, eval and HSD")
    sampler_flags(p)
    p.add_argument("--out-dir")
    return parser


def _overrides(args) -> dict:
    over = {k: v for k, v in vars(args).items() if "." in k}
    if args.command == "train":
        section = "stage2" if (args.init or over.get("paths.model_in")) else "stage1"
        over[f"{section}.epochs"] = args.epochs
        over[f"{section}.lr"] = args.lr
    return over


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
        print(f"ffdr: unknown subcommand {argv[0]!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_USAGE
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = override(load_config(args.config), _overrides(args))
        return COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"ffdr: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as exc:
        print(f"ffdr: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (FileNotFoundError, IsADirectoryError, CorpusError, EvalFormatError, PairFileError, KeyError, ValueError) as exc:
        print(f"ffdr: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
