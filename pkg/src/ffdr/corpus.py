"""Document/query ingestion, tokenization and stopword handling."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

_TOKEN_RE = re.compile(r"[^\W_]+")


class CorpusError(ValueError):
    """Malformed or inconsistent corpus/query input."""


def tokenize(text: str, max_tokens: Optional[int] = None) -> list[str]:
    """Lowercase ``text`` and split on every non-alphanumeric character.

    Empty segments are dropped and only the first ``max_tokens`` survive.
    """
    tokens = _TOKEN_RE.findall(text.lower())
    if max_tokens is not None:
        tokens = tokens[:max_tokens]
    return tokens


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class CorpusConfig:
    doc_max_tokens: int = 128
    query_max_tokens: int = 16
    stopword_path: Optional[str] = None

    def __post_init__(self):
        if self.doc_max_tokens < 1 or self.query_max_tokens < 1:
            raise ValueError("token limits must be >= 1")


@dataclass(frozen=True)
class StopwordSet:
    words: frozenset[str] = field(default_factory=frozenset)

    def __contains__(self, word: str) -> bool:
        return word in self.words

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def of(cls, words: Iterable[str]) -> "StopwordSet":
        return cls(frozenset(w.strip().lower() for w in words if w.strip()))


def load_stopwords(path: Optional[str | Path] = None) -> StopwordSet:
    """Read one word per line; ``None`` loads the bundled English list."""
    if path is None:
        text = resources.files("ffdr").joinpath("data/stopwords_en.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return StopwordSet.of(text.splitlines())


def default_stopwords() -> StopwordSet:
    return _DEFAULT_STOPWORDS


def make_document(doc_id: str, text: str, config: CorpusConfig = CorpusConfig()) -> Document:
    return Document(doc_id, text, tuple(tokenize(text, config.doc_max_tokens)))


def make_query(query_id: str, text: str, config: CorpusConfig = CorpusConfig()) -> Query:
    return Query(query_id, text, tuple(tokenize(text, config.query_max_tokens)))


def load_corpus(path: str | Path, config: CorpusConfig = CorpusConfig()) -> list[Document]:
    """Load a JSONL corpus (``id``, ``text``, optional ``title``) in file order."""
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            doc_id, text = obj.get("id"), obj.get("text")
            if not isinstance(doc_id, str) or not doc_id:
                raise CorpusError(f"{path}:{lineno}: missing or empty string field 'id'")
            if not isinstance(text, str):
                raise CorpusError(f"{path}:{lineno}: missing string field 'text'")
            title = obj.get("title")
            if isinstance(title, str) and title:
                text = f"{title} {text}"
            if doc_id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate document id {doc_id!r}")
            seen.add(doc_id)
            docs.append(make_document(doc_id, text, config))
    return docs


def load_queries(path: str | Path, config: CorpusConfig = CorpusConfig()) -> list[Query]:
    """Load a two-column ``id<TAB>text`` query file."""
    queries: list[Query] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise CorpusError(f"{path}:{lineno}: expected 'id<TAB>text'")
            qid, text = line.split("\t", 1)
            if not qid:
                raise CorpusError(f"{path}:{lineno}: empty query id")
            if qid in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate query id {qid!r}")
            seen.add(qid)
            queries.append(make_query(qid, text, config))
    return queries


def write_corpus(docs: Iterable[tuple[str, str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc_id, text in docs:
            fh.write(json.dumps({"id": doc_id, "text": text}) + "\n")


def write_queries(queries: Iterable[tuple[str, str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, text in queries:
            fh.write(f"{qid}\t{text}\n")


_DEFAULT_STOPWORDS = load_stopwords()
