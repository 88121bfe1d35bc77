"""Embedding tables, TransE knowledge-graph embeddings, and joint word-entity skip-gram."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import FormatError

log = logging.getLogger(__name__)

KINDS = ("transe-entity", "transe-predicate", "joint")


class EmbeddingTable:
    """Dense vectors keyed by symbol.

    Lookups of unknown symbols return ``None`` rather than a zero vector.
    """

    def __init__(self, symbols: Sequence[str], vectors: np.ndarray, kind: str = "joint"):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(symbols):
            raise ValueError("vectors must be a (len(symbols), dim) matrix")
        if vectors.shape[1] < 1:
            raise ValueError("embedding dimension must be positive")
        if kind not in KINDS:
            raise ValueError(f"unknown embedding kind {kind!r}")
        self.symbols = list(symbols)
        self.vectors = vectors
        self.kind = kind
        self.index = {s: i for i, s in enumerate(self.symbols)}
        if len(self.index) != len(self.symbols):
            raise ValueError("duplicate symbols in embedding table")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol) -> bool:
        return symbol in self.index

    def get(self, symbol: str) -> np.ndarray | None:
        i = self.index.get(symbol)
        return None if i is None else self.vectors[i]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{len(self.symbols)} {self.dim}\n")
            for sym, row in zip(self.symbols, self.vectors.tolist()):
                f.write(sym + " " + " ".join(map(repr, row)) + "\n")

    @classmethod
    def load(cls, path, kind: str = "joint") -> "EmbeddingTable":
        path = Path(path)
        with open(path, encoding="utf-8") as f:
            header = f.readline().split()
            if len(header) != 2:
                raise FormatError(path, 1, "header must be 'count dim'")
            count, dim = int(header[0]), int(header[1])
            symbols, rows = [], []
            for lineno, line in enumerate(f, 2):
                parts = line.rstrip("\n").split(" ")
                if not line.strip():
                    continue
                if len(parts) != dim + 1:
                    raise FormatError(path, lineno, f"expected symbol and {dim} values")
                symbols.append(parts[0])
                try:
                    rows.append([float(x) for x in parts[1:]])
                except ValueError:
                    raise FormatError(path, lineno, "non-numeric vector component") from None
        if len(symbols) != count:
            raise FormatError(path, 1, f"header says {count} vectors, found {len(symbols)}")
        return cls(symbols, np.array(rows, dtype=np.float64).reshape(count, dim), kind)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    return float(np.abs(a - b).sum())


def mean_vector(table: EmbeddingTable, symbols: Iterable[str]) -> np.ndarray | None:
    """Average of the embedded symbols, or ``None`` if none are embedded."""
    rows = [table.index[s] for s in symbols if s in table.index]
    if not rows:
        return None
    return table.vectors[rows].mean(axis=0)


# -- TransE -----------------------------------------------------------------


@dataclass
class TransEConfig:
    dim: int = 50
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 1000
    batch_size: int = 64
    filter_negatives: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dim <= 0 or self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("TransE needs dim > 0, learning_rate > 0, epochs >= 1, batch_size >= 1")


def transe_batch(E, P, pos, neg, margin=1.0):
    """Hinge losses and their (sub)gradients for a batch of triple pairs.

    ``pos`` and ``neg`` are ``(B, 3)`` integer arrays of (head, predicate,
    tail) indices into the entity matrix ``E`` and predicate matrix ``P``.
    Returns ``(losses, dE, dP)`` where the gradients are of the summed loss.
    """
    pos_diff = E[pos[:, 0]] + P[pos[:, 1]] - E[pos[:, 2]]
    neg_diff = E[neg[:, 0]] + P[neg[:, 1]] - E[neg[:, 2]]
    losses = np.maximum(0.0, margin + np.abs(pos_diff).sum(1) - np.abs(neg_diff).sum(1))
    active = losses > 0
    g_pos = np.sign(pos_diff) * active[:, None]
    g_neg = np.sign(neg_diff) * active[:, None]
    dE = np.zeros_like(E)
    dP = np.zeros_like(P)
    np.add.at(dE, pos[:, 0], g_pos)
    np.add.at(dE, pos[:, 2], -g_pos)
    np.add.at(dE, neg[:, 0], -g_neg)
    np.add.at(dE, neg[:, 2], g_neg)
    np.add.at(dP, pos[:, 1], g_pos)
    np.add.at(dP, neg[:, 1], -g_neg)
    return losses, dE, dP


def transe_pair_loss(h, p, t, h_neg, t_neg, margin=1.0) -> float:
    """``[margin + |h + p - t|_1 - |h' + p - t'|_1]_+`` for a single pair."""
    return float(max(0.0, margin + np.abs(h + p - t).sum() - np.abs(h_neg + p - t_neg).sum()))


def transe_pair_gradient(h, p, t, h_neg, t_neg, margin=1.0) -> dict[str, np.ndarray]:
    """Gradient of :func:`transe_pair_loss` w.r.t. each of its five vectors."""
    E = np.stack([h, t, h_neg, t_neg])
    P = np.asarray(p, dtype=np.float64)[None, :]
    _, dE, dP = transe_batch(E, P, np.array([[0, 0, 1]]), np.array([[2, 0, 3]]), margin)
    return {"h": dE[0], "p": dP[0], "t": dE[1], "h_neg": dE[2], "t_neg": dE[3]}


def _unit_rows(M):
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    return M / np.where(norms == 0.0, 1.0, norms)


@dataclass
class TransEResult:
    entities: EmbeddingTable
    predicates: EmbeddingTable
    loss_trace: list[float]


def train_transe(triples, config: TransEConfig | None = None, entities: Sequence[str] | None = None) -> TransEResult:
    """Fit TransE by SGD on the margin hinge loss with L1 distance.

    Each positive triple is paired with one negative made by replacing its
    head or tail (probability 1/2 each) with a different random entity.
    Entity vectors are renormalized to unit L2 norm after every update.
    ``entities`` fixes the entity vocabulary (defaults to triple endpoints).
    """
    cfg = config or TransEConfig()
    triples = [tuple(t) for t in triples]
    if not triples:
        raise ValueError("cannot train TransE on an empty triple set")
    if entities is None:
        entities = sorted({t[0] for t in triples} | {t[2] for t in triples})
    ent_index = {e: i for i, e in enumerate(entities)}
    predicates = sorted({t[1] for t in triples})
    pred_index = {p: i for i, p in enumerate(predicates)}
    try:
        data = np.array([[ent_index[h], pred_index[p], ent_index[t]] for h, p, t in triples], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"triple endpoint {exc.args[0]!r} is not a known entity") from None
    n_ent = len(entities)
    if n_ent < 2:
        raise ValueError("TransE needs at least two entities to corrupt triples")
    known = {tuple(row) for row in data.tolist()}

    rng = np.random.default_rng(cfg.seed)
    bound = 6.0 / np.sqrt(cfg.dim)
    E = _unit_rows(rng.uniform(-bound, bound, size=(n_ent, cfg.dim)))
    P = _unit_rows(rng.uniform(-bound, bound, size=(len(predicates), cfg.dim)))

    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            pos = data[order[start : start + cfg.batch_size]]
            neg = _corrupt(pos, n_ent, rng, known if cfg.filter_negatives else None)
            losses, dE, dP = transe_batch(E, P, pos, neg, cfg.margin)
            total += losses.sum()
            E -= cfg.learning_rate * dE
            P -= cfg.learning_rate * dP
            E = _unit_rows(E)
        trace.append(total / len(data))
        if epoch % 100 == 0:
            log.debug("transe epoch %d loss %.4f", epoch, trace[-1])
    return TransEResult(
        EmbeddingTable(list(entities), E, "transe-entity"),
        EmbeddingTable(predicates, P, "transe-predicate"),
        trace,
    )


def _corrupt(pos, n_ent, rng, known=None, max_tries=10):
    neg = pos.copy()
    side = np.where(rng.random(len(pos)) < 0.5, 0, 2)
    rows = np.arange(len(pos))
    # draw from the other n_ent - 1 entities so a negative never equals its positive
    repl = rng.integers(n_ent - 1, size=len(pos))
    repl += repl >= pos[rows, side]
    neg[rows, side] = repl
    if known is not None:
        for i in range(len(neg)):
            tries = 0
            while tuple(neg[i].tolist()) in known and tries < max_tries:
                r = rng.integers(n_ent - 1)
                neg[i, side[i]] = r + (r >= pos[i, side[i]])
                tries += 1
    return neg


# -- joint word + entity skip-gram -------------------------------------------


@dataclass
class SkipGramConfig:
    dim: int = 300
    window: int = 5
    negative: int = 5
    min_count: int = 1
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        if self.dim <= 0 or self.window < 1 or self.negative < 1 or self.epochs < 1:
            raise ValueError("invalid skip-gram configuration")


def entity_replaced_stream(tokens: Sequence[str], annotations) -> list[str]:
    """Copy of ``tokens`` with each annotated span replaced by its entity id."""
    out = []
    spans = {a.start: a for a in annotations}
    i = 0
    while i < len(tokens):
        a = spans.get(i)
        if a is not None:
            out.append(a.entity_id)
            i += a.length
        else:
            out.append(tokens[i])
            i += 1
    return out


def train_joint_skipgram(
    streams: Sequence[Sequence[str]],
    annotations: Sequence[Sequence] | None = None,
    config: SkipGramConfig | None = None,
) -> EmbeddingTable:
    """Skip-gram with negative sampling over words and linked entities.

    Trains on the original ``streams`` plus, when ``annotations`` are given
    (one list per stream), copies where each annotated span is replaced by
    its entity id.
    """
    cfg = config or SkipGramConfig()
    corpus = [list(s) for s in streams]
    if annotations is not None:
        if len(annotations) != len(corpus):
            raise ValueError("annotations must align with streams")
        corpus += [entity_replaced_stream(s, a) for s, a in zip(streams, annotations) if a]
    counts: dict[str, int] = {}
    for s in corpus:
        for tok in s:
            counts[tok] = counts.get(tok, 0) + 1
    vocab = sorted((t for t, c in counts.items() if c >= cfg.min_count), key=lambda t: (-counts[t], t))
    if not vocab:
        raise ValueError("cannot train skip-gram on an empty corpus")
    index = {t: i for i, t in enumerate(vocab)}
    encoded = [np.array([index[t] for t in s if t in index], dtype=np.int64) for s in corpus]
    encoded = [s for s in encoded if len(s) > 1]

    rng = np.random.default_rng(cfg.seed)
    V, dim = len(vocab), cfg.dim
    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_out = np.zeros((V, dim))
    noise = np.array([counts[t] for t in vocab], dtype=np.float64) ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())

    total_steps = max(1, cfg.epochs * sum(len(s) for s in encoded))
    step = 0
    for _ in range(cfg.epochs):
        for si in rng.permutation(len(encoded)):
            seq = encoded[si]
            for pos in range(len(seq)):
                lr = cfg.learning_rate * max(1e-4, 1.0 - step / total_steps)
                step += 1
                lo, hi = max(0, pos - cfg.window), min(len(seq), pos + cfg.window + 1)
                ctx = np.concatenate([seq[lo:pos], seq[pos + 1 : hi]])
                if not len(ctx):
                    continue
                negs = np.searchsorted(noise_cdf, rng.random((len(ctx), cfg.negative)))
                negs = np.minimum(negs, V - 1)
                targets = np.concatenate([ctx[:, None], negs], axis=1)
                labels = np.zeros(targets.shape)
                labels[:, 0] = 1.0
                center = w_in[seq[pos]]
                u = w_out[targets]
                s = 1.0 / (1.0 + np.exp(-(u @ center)))
                g = (labels - s) * lr
                w_in[seq[pos]] += np.einsum("ck,ckd->d", g, u)
                np.add.at(w_out, targets.ravel(), (g[..., None] * center).reshape(-1, dim))
    return EmbeddingTable(vocab, w_in, "joint")
