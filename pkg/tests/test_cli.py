import csv
import dataclasses
import json
import subprocess
import sys
from pathlib import Path

import pytest

from ffdr.cli import main
from ffdr.config import ConfigError, PipelineConfig, from_dict, load_config, override, to_toml
from ffdr.corpus import load_corpus, load_queries
from ffdr.evaluation import evaluate_run, parse_qrels, parse_run
from ffdr.lexindex import load_index
from ffdr.pipeline import search
from ffdr.ranker import load_model
from ffdr.sampler import parse_pairs
from ffdr.synth import FILES, SynthConfig, synth_benchmark


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    assert main(["synth", "--out", str(out), "--n-docs", "80", "--n-topics", "8", "--seed", "3"]) == 0
    cfg = (out / "config.toml").read_text()
    # shorter training keeps the CLI tests quick
    cfg = cfg.replace("epochs = 5\n", "epochs = 2\n").replace("epochs = 10\n", "epochs = 2\n")
    (out / "small.toml").write_text(cfg)
    return out


def run_cli(*argv):
    return main([str(a) for a in argv])


# ---------------------------------------------------------------- synth


def test_synth_deterministic(tmp_path):
    cfg = SynthConfig(seed=11, n_docs=60, n_topics=6)
    a = synth_benchmark(cfg, tmp_path / "a")
    b = synth_benchmark(cfg, tmp_path / "b")
    for role in FILES:
        assert a[role].read_bytes() == b[role].read_bytes(), role
    c = synth_benchmark(SynthConfig(seed=12, n_docs=60, n_topics=6), tmp_path / "c")
    assert c["corpus"].read_bytes() != a["corpus"].read_bytes()


def test_synth_guarantees(tmp_path):
    paths = synth_benchmark(SynthConfig(seed=0), tmp_path)
    qrels = parse_qrels(paths["qrels"])
    assert len(qrels.judgments) == 20
    for topic, judged in qrels.judgments.items():
        assert any(g == 2 for g in judged.values()), topic
    docs = load_corpus(paths["corpus"])
    assert len(docs) >= 200
    ids = {d.id for d in docs}
    assert all(d in ids for j in qrels.judgments.values() for d in j)
    pairs = parse_pairs(paths["stage1_pairs"])
    assert pairs and all(p.provenance["pos_method"] == "labeled" for p in pairs)


def test_synth_bm25_recovers_signal(tmp_path):
    paths = synth_benchmark(SynthConfig(seed=0), tmp_path)
    run = search("bm25", load_queries(paths["queries"]), load_corpus(paths["corpus"]))
    ndcg = evaluate_run(parse_qrels(paths["qrels"]), run, ["ndcg"], 10)["ndcg"].mean
    assert ndcg > 0.3


def test_synth_rejects_tiny():
    with pytest.raises(ValueError):
        SynthConfig(n_docs=10)
    with pytest.raises(ValueError):
        SynthConfig(n_topics=2)


# ---------------------------------------------------------------- config


def test_config_round_trip_and_overrides(tmp_path):
    cfg = override(PipelineConfig(), {"sampler.U": 20, "sweep.V": (3, 5), "eval.k": None})
    assert cfg.sampler.U == 20 and cfg.sweep.V == (3, 5) and cfg.eval.k == 10
    (tmp_path / "c.toml").write_text(to_toml(cfg))
    loaded = load_config(tmp_path / "c.toml")
    assert loaded.paths.work_dir == str(tmp_path / "runs")
    assert dataclasses.replace(loaded, paths=cfg.paths) == cfg
    with pytest.raises(ConfigError):
        from_dict({"sampler": {"UU": 1}})
    with pytest.raises(ConfigError):
        from_dict({"nope": {}})
    with pytest.raises(ConfigError):
        from_dict({"sampler": {"pos_method": "bert"}})


def test_config_relative_paths(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "c.toml").write_text('[paths]\ncorpus = "d.jsonl"\n')
    assert load_config(tmp_path / "sub" / "c.toml").paths.corpus == str(tmp_path / "sub" / "d.jsonl")


# ---------------------------------------------------------------- exit codes


def test_exit_codes(bench, tmp_path, capsys):
    assert run_cli("frobnicate") == 1
    assert run_cli() == 1
    assert run_cli("index", "--config", tmp_path / "missing.toml", "--out", tmp_path / "x") == 2
    (tmp_path / "bad.toml").write_text("[sampler]\nU = 0\n")
    assert run_cli("index", "--config", tmp_path / "bad.toml", "--out", tmp_path / "x") == 2
    assert run_cli("index", "--out", tmp_path / "x") == 2
    assert run_cli("search", "--mode", "nope", "--out", tmp_path / "x") == 2
    assert run_cli("index", "--corpus", tmp_path / "none.jsonl", "--out", tmp_path / "x") == 3
    (tmp_path / "broken.jsonl").write_text('{"id": "a", "text": "x"}\nnot json\n')
    assert run_cli("index", "--corpus", tmp_path / "broken.jsonl", "--out", tmp_path / "x") == 3
    assert "broken.jsonl:2" in capsys.readouterr().err


def test_invariant_exit_code(bench, tmp_path, monkeypatch):
    import ffdr.cli as cli

    def broken(*a, **k):
        raise cli.InvariantError("forced")

    monkeypatch.setattr(cli, "check_run", broken)
    assert run_cli("search", "--config", bench / "small.toml", "--out", tmp_path / "r.run") == 4


def test_console_script_entry_point(bench):
    proc = subprocess.run([sys.executable, "-m", "ffdr.cli", "nope"], capture_output=True, text=True)
    assert proc.returncode == 1 and "unknown subcommand" in proc.stderr


# ---------------------------------------------------------------- subcommands


def manifest(path):
    return json.loads(Path(path).read_text())


def test_index_and_extract(bench, tmp_path):
    cfg = bench / "small.toml"
    assert run_cli("index", "--config", cfg, "--out", tmp_path / "idx") == 0
    assert load_index(tmp_path / "idx").N >= 80
    m = manifest(tmp_path / "idx.manifest.json")
    assert set(m) >= {"config_sha256", "seeds", "inputs", "outputs", "config"}
    assert run_cli("extract", "--config", cfg, "--method", "rake", "--V", "3", "--out", tmp_path / "kw.jsonl") == 0
    rows = [json.loads(l) for l in (tmp_path / "kw.jsonl").read_text().splitlines()]
    assert rows and all(r["method"] == "rake" and len(r["keywords"]) <= 3 for r in rows)


@pytest.mark.parametrize("pos,neg", [("textrank", "random"), ("tfidf", "bm25"), ("keybert", "random"), ("pseudo_label", "bm25")])
def test_genpairs(bench, tmp_path, pos, neg):
    out = tmp_path / "pairs.jsonl"
    assert run_cli("genpairs", "--config", bench / "small.toml", "--pos-method", pos, "--neg-method", neg,
                   "--m", 7, "--out", out) == 0
    insts = parse_pairs(out)
    assert insts
    for inst in insts:
        assert inst.provenance["pos_method"] == pos
        assert inst.provenance["neg_method"] == neg
        assert len(inst.negative_docs) == 7
    assert manifest(str(out) + ".manifest.json")["config"]["sampler"]["pos_method"] == pos


def test_train_search_eval_hsd(bench, tmp_path):
    cfg = bench / "small.toml"
    s1 = tmp_path / "s1.dlmc"
    assert run_cli("train", "--config", cfg, "--out", s1) == 0
    trace = list(csv.reader((tmp_path / "s1.dlmc.trace.csv").open()))
    assert trace[0] == ["epoch", "mean_loss"] and len(trace) == 3
    pairs = tmp_path / "p.jsonl"
    assert run_cli("genpairs", "--config", cfg, "--out", pairs) == 0
    s2 = tmp_path / "s2.dlmc"
    assert run_cli("train", "--config", cfg, "--init", s1, "--pairs", pairs, "--epochs", 1, "--out", s2) == 0
    assert len(load_model(s2).vocab) >= len(load_model(s1).vocab)

    runs = []
    for mode, model in (("bm25", None), ("direct", s1), ("adapted", s2)):
        out = tmp_path / f"{mode}.run"
        extra = ["--model", model] if model else []
        assert run_cli("search", "--config", cfg, "--mode", mode, *extra, "--k", 50, "--out", out) == 0
        runs.append(out)
    assert run_cli("search", "--config", cfg, "--mode", "direct", "--out", tmp_path / "x.run") == 2

    ev = tmp_path / "ev"
    assert run_cli("eval", "--config", cfg, *sum([["--run", r] for r in runs], []), "--out-dir", ev) == 0
    for row in csv.DictReader((ev / "bm25.per_topic.csv").open()):
        assert 0.0 <= float(row["nDCG@0010"]) <= 1.0
    summary = list(csv.DictReader((ev / "summary.csv").open()))
    assert [r["run"] for r in summary] == ["bm25", "direct", "adapted"]

    out = tmp_path / "hsd.csv"
    assert run_cli("hsd", "--config", cfg, "--run", runs[0], "--run", runs[1], "--B", 200, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",bm25,direct" and len(lines) == 3
    assert run_cli("hsd", "--config", cfg, "--run", runs[0], "--out", out) == 2


def test_sweep_shape(bench, tmp_path):
    out = tmp_path / "sweep"
    assert run_cli("sweep", "--config", bench / "small.toml", "--U", "1,5", "--V", "3", "--out-dir", out) == 0
    u_rows = list(csv.DictReader((out / "sweep_U.csv").open()))
    v_rows = list(csv.DictReader((out / "sweep_V.csv").open()))
    assert [r["run"] for r in u_rows] == ["U=1", "U=5"]
    assert [r["run"] for r in v_rows] == ["V=3"]
    for r in u_rows + v_rows:
        for col in ("nDCG@0010", "Q@0010", "nERR@0010", "iRBU@0010"):
            assert 0.0 <= float(r[col]) <= 1.0
    assert (out / "U=5.per_topic.csv").exists() and (out / "manifest.json").exists()
