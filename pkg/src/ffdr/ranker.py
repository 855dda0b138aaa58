"""Mini-COIL: a static-embedding dual encoder with exact-lexical-match scoring.

``s(q, d) = cls(q) . cls(d) + sum_{t in q & d} q_tok[t] . d_tok[t]``

where ``cls`` mean-pools a per-side CLS table over the text's tokens.
Training minimises the softmax contrastive loss of one positive against
``m`` negatives with hand-derived gradients and a row-sparse AdamW.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .lexindex import ScoredDoc, rank_scores
from .sampler import TrainingInstance

log = logging.getLogger(__name__)

MODEL_MAGIC = b"DLMC1\n"
MODEL_VERSION = 1
INIT_SCALE = 0.05
TABLES = ("q_tok", "d_tok", "q_cls", "d_cls")


@dataclass
class MiniCoilModel:
    vocab: dict[str, int]
    q_tok: np.ndarray
    d_tok: np.ndarray
    q_cls: np.ndarray
    d_cls: np.ndarray

    @property
    def n_t(self) -> int:
        return self.q_tok.shape[1]

    @property
    def n_c(self) -> int:
        return self.q_cls.shape[1]

    def table(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        """Vocabulary rows for ``tokens``; unknown tokens are dropped."""
        vocab = self.vocab
        return [vocab[t] for t in tokens if t in vocab]

    def copy(self) -> "MiniCoilModel":
        return MiniCoilModel(dict(self.vocab), *(self.table(n).copy() for n in TABLES))


@dataclass(frozen=True)
class ScoreBreakdown:
    cls_product: float
    match_score: float
    total: float


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    warmup_ratio: float = 0.1
    epochs: int = 3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.warmup_ratio <= 1:
            raise ValueError("warmup_ratio must lie in [0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


# full-scale optimiser settings, kept for reference runs
REFERENCE_TRAIN_CONFIG = TrainConfig(lr=2e-6)


def _token_init(token: str, seed: int, n_t: int, n_c: int) -> list[np.ndarray]:
    digest = hashlib.sha256(f"{seed}\x00{token}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
    return [rng.uniform(-INIT_SCALE, INIT_SCALE, size=d) for d in (n_t, n_t, n_c, n_c)]


def init_model(vocab: Iterable[str], n_t: int = 32, n_c: int = 32, seed: int = 0) -> MiniCoilModel:
    """Fresh model; each token's rows depend only on ``(seed, token)``."""
    tokens = list(dict.fromkeys(vocab))
    if not tokens:
        raise ValueError("empty vocabulary")
    if n_t < 1 or n_c < 1:
        raise ValueError("n_t and n_c must be >= 1")
    model = MiniCoilModel({}, np.empty((0, n_t)), np.empty((0, n_t)), np.empty((0, n_c)), np.empty((0, n_c)))
    return extend_vocab(model, tokens, seed)


def extend_vocab(model: MiniCoilModel, tokens: Iterable[str], seed: int = 0) -> MiniCoilModel:
    """Append rows for tokens the model has not seen; existing rows are untouched."""
    new = [t for t in dict.fromkeys(tokens) if t not in model.vocab]
    if not new:
        return model
    rows = [_token_init(t, seed, model.n_t, model.n_c) for t in new]
    vocab = dict(model.vocab)
    for t in new:
        vocab[t] = len(vocab)
    tables = [np.vstack([model.table(name), np.array([r[i] for r in rows])]) for i, name in enumerate(TABLES)]
    return MiniCoilModel(vocab, *tables)


def cls_vector(model: MiniCoilModel, tokens: Sequence[str], side: str) -> np.ndarray:
    if side not in ("query", "doc"):
        raise ValueError(f"side must be 'query' or 'doc', not {side!r}")
    table = model.q_cls if side == "query" else model.d_cls
    ids = model.ids(tokens)
    if not ids:
        return np.zeros(model.n_c)
    return table[ids].mean(axis=0)


def match_score(model: MiniCoilModel, query_tokens: Sequence[str], doc_tokens: Sequence[str]) -> float:
    doc_ids = set(model.ids(doc_tokens))
    total = 0.0
    for t in dict.fromkeys(model.ids(query_tokens)):
        if t in doc_ids:
            # max over doc occurrences collapses to one dot product with static tables
            total += float(model.q_tok[t] @ model.d_tok[t])
    return total


def score(model: MiniCoilModel, query_tokens: Sequence[str], doc_tokens: Sequence[str]) -> ScoreBreakdown:
    cls_product = float(cls_vector(model, query_tokens, "query") @ cls_vector(model, doc_tokens, "doc"))
    match = match_score(model, query_tokens, doc_tokens)
    return ScoreBreakdown(cls_product, match, cls_product + match)


def softmax_weights(scores: Sequence[float]) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    e = np.exp(s - s.max())
    return e / e.sum()


def contrastive_loss(positive: float, negatives: Sequence[float]) -> float:
    """``-log softmax`` of the positive among ``[positive, *negatives]``."""
    scores = np.array([positive, *negatives], dtype=float)
    if len(scores) < 2:
        raise ValueError("need at least one negative score")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    top = scores.max()
    shifted = np.exp(scores - top)
    if positive == top:
        loss = math.log1p(shifted[1:].sum())
    else:
        loss = (top - positive) + math.log(shifted.sum())
    return max(loss, 0.0)


@dataclass
class SparseGrad:
    rows: np.ndarray
    values: np.ndarray


def _sparse(accum: dict[int, np.ndarray], dim: int) -> SparseGrad:
    rows = np.array(sorted(accum), dtype=np.int64)
    values = np.array([accum[r] for r in rows]) if len(rows) else np.empty((0, dim))
    return SparseGrad(rows, values)


def _add(accum: dict[int, np.ndarray], row: int, vec: np.ndarray) -> None:
    if row in accum:
        accum[row] = accum[row] + vec
    else:
        accum[row] = vec.copy()


def loss_and_gradients(
    model: MiniCoilModel,
    query_tokens: Sequence[str],
    doc_token_lists: Sequence[Sequence[str]],
) -> tuple[float, dict[str, SparseGrad]]:
    """Loss and exact gradients for ``doc_token_lists = [positive, *negatives]``.

    Only rows that enter the score are present in the sparse result.
    """
    q_ids = model.ids(query_tokens)
    q_counts = Counter(q_ids)
    q_distinct = list(dict.fromkeys(q_ids))
    cls_q = model.q_cls[q_ids].mean(axis=0) if q_ids else np.zeros(model.n_c)

    doc_counts, doc_cls, overlaps, scores = [], [], [], []
    for tokens in doc_token_lists:
        d_ids = model.ids(tokens)
        counts = Counter(d_ids)
        cls_d = model.d_cls[d_ids].mean(axis=0) if d_ids else np.zeros(model.n_c)
        overlap = [t for t in q_distinct if t in counts]
        match = 0.0
        for t in overlap:
            match += float(model.q_tok[t] @ model.d_tok[t])
        scores.append(float(cls_q @ cls_d) + match)
        doc_counts.append((counts, len(d_ids)))
        doc_cls.append(cls_d)
        overlaps.append(overlap)

    loss = contrastive_loss(scores[0], scores[1:])
    coeff = softmax_weights(scores)
    coeff[0] -= 1.0

    g = {name: {} for name in TABLES}
    if q_ids:
        g_cls_q = np.zeros(model.n_c)
        for c, cls_d in zip(coeff, doc_cls):
            g_cls_q += c * cls_d
        for t, n in q_counts.items():
            _add(g["q_cls"], t, g_cls_q * (n / len(q_ids)))
        for c, (counts, length) in zip(coeff, doc_counts):
            for t, n in counts.items():
                _add(g["d_cls"], t, cls_q * (c * n / length))
    tok_weight: dict[int, float] = {}
    for c, overlap in zip(coeff, overlaps):
        for t in overlap:
            tok_weight[t] = tok_weight.get(t, 0.0) + c
    for t, w in tok_weight.items():
        g["q_tok"][t] = model.d_tok[t] * w
        g["d_tok"][t] = model.q_tok[t] * w

    dims = {"q_tok": model.n_t, "d_tok": model.n_t, "q_cls": model.n_c, "d_cls": model.n_c}
    return loss, {name: _sparse(g[name], dims[name]) for name in TABLES}


def loss_gradients(
    model: MiniCoilModel,
    instance: TrainingInstance,
    doc_tokens: Mapping[str, Sequence[str]],
) -> dict[str, SparseGrad]:
    docs = [doc_tokens[instance.positive_doc], *(doc_tokens[d] for d in instance.negative_docs)]
    return loss_and_gradients(model, instance.query_tokens, docs)[1]


def instance_loss(model: MiniCoilModel, instance: TrainingInstance, doc_tokens: Mapping[str, Sequence[str]]) -> float:
    pos = score(model, instance.query_tokens, doc_tokens[instance.positive_doc]).total
    negs = [score(model, instance.query_tokens, doc_tokens[d]).total for d in instance.negative_docs]
    return contrastive_loss(pos, negs)


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, model: MiniCoilModel) -> "AdamWState":
        return cls(
            {n: np.zeros_like(model.table(n)) for n in TABLES},
            {n: np.zeros_like(model.table(n)) for n in TABLES},
        )


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warm-up to ``config.lr`` then linear decay to zero at ``total_steps``."""
    warmup = config.warmup_ratio * total_steps
    if warmup > 0 and step <= warmup:
        return config.lr * step / warmup
    if total_steps <= warmup:
        return 0.0
    return config.lr * max(total_steps - step, 0) / (total_steps - warmup)


def adamw_step(
    model: MiniCoilModel,
    state: AdamWState,
    grads: Mapping[str, SparseGrad],
    step: int,
    config: TrainConfig,
    lr: Optional[float] = None,
) -> None:
    """In-place AdamW update of the touched rows (``step`` is 1-based)."""
    lr = config.lr if lr is None else lr
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step
    for name, grad in grads.items():
        if len(grad.rows) == 0:
            continue
        rows, gv = grad.rows, grad.values
        param, m, v = model.table(name), state.m[name], state.v[name]
        if param.shape != m.shape:
            raise ValueError(f"optimizer state for {name} does not match the model")
        m[rows] = b1 * m[rows] + (1.0 - b1) * gv
        v[rows] = b2 * v[rows] + (1.0 - b2) * gv * gv
        update = (m[rows] / bc1) / (np.sqrt(v[rows] / bc2) + config.eps)
        param[rows] = param[rows] * (1.0 - lr * config.weight_decay) - lr * update


@dataclass
class TrainResult:
    model: MiniCoilModel
    loss_trace: list[float] = field(default_factory=list)


def train(
    model: MiniCoilModel,
    dataset: Sequence[TrainingInstance],
    doc_tokens: Mapping[str, Sequence[str]],
    config: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Batch-size-1 AdamW over a seeded per-epoch shuffle; returns a new model."""
    if not dataset:
        raise ValueError("empty training set")
    model = model.copy()
    state = AdamWState.zeros_like(model)
    total = config.epochs * len(dataset)
    step = 0
    trace = []
    encoded = [
        (inst.query_tokens, [doc_tokens[inst.positive_doc], *(doc_tokens[d] for d in inst.negative_docs)])
        for inst in dataset
    ]
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(dataset))
        losses = []
        for i in order:
            step += 1
            loss, grads = loss_and_gradients(model, *encoded[i])
            adamw_step(model, state, grads, step, config, lr_at(step, total, config))
            losses.append(loss)
        trace.append(float(np.mean(losses)))
        log.info("epoch %d mean loss %.6f", epoch + 1, trace[-1])
    return TrainResult(model, trace)


def rerank(
    model: MiniCoilModel,
    query_tokens: Sequence[str],
    candidates: Sequence[ScoredDoc],
    k: int,
    doc_tokens: Mapping[str, Sequence[str]],
) -> list[ScoredDoc]:
    ids = [c.doc_id for c in candidates]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate candidates")
    scores = [score(model, query_tokens, doc_tokens[d]).total for d in ids]
    return rank_scores(ids, scores, k)


def save_model(model: MiniCoilModel, path: str | Path) -> None:
    """``DLMC1`` magic, u64 header length, JSON header, then four float64 tables.

    Tables are stored little-endian, row-major, in the order q_tok, d_tok,
    q_cls, d_cls; the header lists the vocabulary in row order.
    """
    vocab = sorted(model.vocab, key=model.vocab.__getitem__)
    header = json.dumps(
        {"version": MODEL_VERSION, "n_t": model.n_t, "n_c": model.n_c, "vocab": vocab},
        ensure_ascii=False,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name in TABLES:
            fh.write(np.ascontiguousarray(model.table(name), dtype="<f8").tobytes())


def load_model(path: str | Path) -> MiniCoilModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(MODEL_MAGIC):
        raise ValueError(f"{path}: not a DLMC1 model file")
    pos = len(MODEL_MAGIC)
    if len(raw) < pos + 8:
        raise ValueError(f"{path}: truncated model header")
    (hlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ValueError(f"{path}: truncated or corrupt model header") from None
    pos += hlen
    if header.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {header.get('version')!r}")
    n_vocab, n_t, n_c = len(header["vocab"]), header["n_t"], header["n_c"]
    expected = pos + 8 * n_vocab * (2 * n_t + 2 * n_c)
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)} (truncated?)")
    tables = []
    for dim in (n_t, n_t, n_c, n_c):
        size = n_vocab * dim
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(n_vocab, dim)
        tables.append(arr.astype(np.float64))
        pos += 8 * size
    vocab = {t: i for i, t in enumerate(header["vocab"])}
    return MiniCoilModel(vocab, *tables)


def vocab_coverage(model: MiniCoilModel, token_lists: Iterable[Sequence[str]]) -> tuple[int, int]:
    """``(unknown, total)`` token counts; logs a warning when any are unknown."""
    unknown = total = 0
    for tokens in token_lists:
        total += len(tokens)
        unknown += sum(1 for t in tokens if t not in model.vocab)
    if unknown:
        log.warning("%d of %d tokens are outside the model vocabulary and will be skipped", unknown, total)
    return unknown, total
