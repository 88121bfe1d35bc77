"""Word-entity duet ranking features and attention features.

Every query word gets a 66-column ranking row (word-to-word features then
word-to-document-entity features); every query entity gets a 36-column
ranking row (entity-text-to-word features then embedding-histogram
features) and a 4-column attention row. Column order is frozen and hashed
into :data:`SCHEMA_HASH`; caches and model files carry the hash.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import FIELDS, CollectionStats, Document, FieldStats, FormatError
from .embeddings import EmbeddingTable, cosine, mean_vector
from .kb import ENTITY_TEXT_FIELDS, KnowledgeBase
from .linker import Annotation, BagOfEntities
from .retrieval import DEFAULT_PARAMS, SCORERS, RetrievalParams, score, score_singleton

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MISSING_ENTITY_SCORE = -20.0

QW_DE_SCORERS = ("coord", "tfidf", "lm_dir")
QW_DE_DEPTH = {"title": 3, "body": 5}
QE_DW_SCORERS = ("bm25", "tfidf", "bool_or", "bool_and", "coord", "lm_dir")
SOFT_BIN_EDGES = (0.8, 0.6, 0.4, 0.2, 0.0)

QW_DW_COLUMNS = [f"qw_dw:{s}:{f}" for s in SCORERS for f in FIELDS]
QW_DE_COLUMNS = [
    f"qw_de:{s}:{f}:{text}:{k + 1}"
    for s in QW_DE_SCORERS
    for f in FIELDS
    for text in ENTITY_TEXT_FIELDS
    for k in range(QW_DE_DEPTH[f])
]
QE_DW_COLUMNS = [f"qe_dw:{s}:{text}:{f}" for s in QE_DW_SCORERS for text in ENTITY_TEXT_FIELDS for f in FIELDS]
QE_DE_COLUMNS = [f"qe_de:{f}:bin{k}" for f in FIELDS for k in range(1 + len(SOFT_BIN_EDGES))]
ATTENTION_COLUMNS = ["entropy", "is_top_candidate", "cmns_margin", "query_similarity"]

WORD_COLUMNS = QW_DW_COLUMNS + QW_DE_COLUMNS
ENTITY_COLUMNS = QE_DW_COLUMNS + QE_DE_COLUMNS
WORD_DIM = len(WORD_COLUMNS)
ENTITY_DIM = len(ENTITY_COLUMNS)
WORD_ATT_DIM = 1
ENTITY_ATT_DIM = len(ATTENTION_COLUMNS)

assert len(QW_DW_COLUMNS) == 18 and len(QW_DE_COLUMNS) == 48 and WORD_DIM == 66
assert len(QE_DW_COLUMNS) == 24 and len(QE_DE_COLUMNS) == 12 and ENTITY_DIM == 36
assert ENTITY_ATT_DIM == 4

SCHEMA_HASH = hashlib.sha256(
    json.dumps(
        {
            "version": SCHEMA_VERSION,
            "word": WORD_COLUMNS,
            "entity": ENTITY_COLUMNS,
            "attention": ATTENTION_COLUMNS,
            "bins": SOFT_BIN_EDGES,
            "missing": MISSING_ENTITY_SCORE,
        }
    ).encode()
).hexdigest()[:16]

FEATURE_GROUPS = ("qw_dw", "qe_dw", "qw_de", "qe_de")


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EsrBinConfig:
    """Lower edges of the soft-match bins, highest first.

    Bin 0 is the exact-match bin; soft bin k covers ``[edge_k, edge_{k-1})``
    with the top soft bin closed at 1.
    """

    soft_edges: tuple[float, ...] = SOFT_BIN_EDGES

    def __post_init__(self):
        e = self.soft_edges
        if len(e) != len(SOFT_BIN_EDGES):
            raise ValueError("the feature schema fixes five soft bins")
        if any(a <= b for a, b in zip(e, e[1:])) or e[-1] != 0.0 or e[0] >= 1.0:
            raise ValueError("soft bin edges must descend strictly from below 1 to 0")

    @property
    def n_bins(self) -> int:
        return 1 + len(self.soft_edges)

    def bin_index(self, similarity: float, identical: bool) -> int:
        if identical:
            return 0
        for k, lo in enumerate(self.soft_edges, 1):
            if similarity >= lo:
                return k
        return self.n_bins - 1


def esr_similarity(e_i: str, e_j: str, table: EmbeddingTable | None) -> float:
    """Embedding translation score in [0, 1]; exactly 1 for the same entity.

    Vectors are L1-normalized so ``1 - |u - v|_1 / 2`` lands in [0, 1].
    Entities without a (nonzero) embedding score 0 against others.
    """
    if e_i == e_j:
        return 1.0
    if table is None:
        return 0.0
    a, b = table.get(e_i), table.get(e_j)
    if a is None or b is None:
        return 0.0
    na, nb = np.abs(a).sum(), np.abs(b).sum()
    if na == 0.0 or nb == 0.0:
        return 0.0
    sim = 1.0 - np.abs(a / na - b / nb).sum() / 2.0
    return float(min(1.0, max(0.0, sim)))


def qw_dw_row(word: str, doc: Document, stats: CollectionStats, params: RetrievalParams = DEFAULT_PARAMS) -> np.ndarray:
    return np.array(
        [score_singleton(s, word, doc.bag(f), stats[f], params) for s in SCORERS for f in FIELDS],
        dtype=np.float64,
    )


def qe_dw_row(
    entity_id: str,
    doc: Document,
    kb: KnowledgeBase,
    stats: CollectionStats,
    params: RetrievalParams = DEFAULT_PARAMS,
) -> np.ndarray:
    bags = {text: kb.text_bag(entity_id, text) for text in ENTITY_TEXT_FIELDS}
    return np.array(
        [
            score(s, bags[text], doc.bag(f), stats[f], params)
            for s in QE_DW_SCORERS
            for text in ENTITY_TEXT_FIELDS
            for f in FIELDS
        ],
        dtype=np.float64,
    )


def _top_k(values: Sequence[float], k: int) -> list[float]:
    top = sorted(values, reverse=True)[:k]
    return top + [MISSING_ENTITY_SCORE] * (k - len(top))


def qw_de_row(
    word: str,
    doc_entities: Mapping[str, BagOfEntities],
    kb: KnowledgeBase,
    params: RetrievalParams = DEFAULT_PARAMS,
    cache: dict | None = None,
) -> np.ndarray:
    """Top-k retrieval scores of ``word`` against document entities' texts.

    Real scores are floored at the missing-entity sentinel so padding only
    ever appears as a suffix of each sorted group.
    """
    row = []
    text_stats = kb.text_stats
    for s in QW_DE_SCORERS:
        for f in FIELDS:
            bag = doc_entities.get(f)
            ents = list(bag.counts) if bag is not None else []
            for text in ENTITY_TEXT_FIELDS:
                vals = []
                for e in ents:
                    key = (s, word, e, text)
                    v = cache.get(key) if cache is not None else None
                    if v is None:
                        v = max(score_singleton(s, word, kb.text_bag(e, text), text_stats[text], params), MISSING_ENTITY_SCORE)
                        if cache is not None:
                            cache[key] = v
                    vals.append(v)
                row.extend(_top_k(vals, QW_DE_DEPTH[f]))
    return np.array(row, dtype=np.float64)


def esr_bin_counts(
    query_entity: str,
    doc_entities: BagOfEntities | None,
    table: EmbeddingTable | None,
    bins: EsrBinConfig = EsrBinConfig(),
) -> list[int]:
    """Histogram of translation scores, each document entity counted tf times."""
    counts = [0] * bins.n_bins
    if doc_entities is None:
        return counts
    for e, tf in doc_entities.counts.items():
        sim = esr_similarity(query_entity, e, table)
        counts[bins.bin_index(sim, e == query_entity)] += tf
    return counts


def qe_de_row(
    query_entity: str,
    doc_entities: Mapping[str, BagOfEntities],
    table: EmbeddingTable | None,
    bins: EsrBinConfig = EsrBinConfig(),
) -> np.ndarray:
    row = []
    for f in FIELDS:
        row.extend(math.log1p(c) for c in esr_bin_counts(query_entity, doc_entities.get(f), table, bins))
    return np.array(row, dtype=np.float64)


def attention_row(
    entity_id: str,
    annotation: Annotation | None,
    query_tokens: Sequence[str],
    kb: KnowledgeBase,
    joint: EmbeddingTable | None = None,
) -> np.ndarray:
    """[form entropy, is-top-candidate, CMNS margin to next candidate, query similarity].

    An entity without an annotation (or with an unknown form) is treated as
    the sole candidate of its form.
    """
    cands = kb.candidates(annotation.form) if annotation is not None else []
    cmns = dict(cands)
    if entity_id in cmns:
        entropy = kb.candidate_entropy(annotation.form)
        linked = cmns[entity_id]
        is_top = 1.0 if linked >= cands[0][1] else 0.0
        pos = [e for e, _ in cands].index(entity_id)
        margin = linked - (cands[pos + 1][1] if pos + 1 < len(cands) else 0.0)
    else:
        entropy, is_top, margin = 0.0, 1.0, 1.0
    sim = 0.0
    if joint is not None:
        ev = joint.get(entity_id)
        qv = mean_vector(joint, query_tokens)
        if ev is not None and qv is not None:
            sim = cosine(ev, qv)
    return np.array([entropy, is_top, margin, sim], dtype=np.float64)


@dataclass
class DuetFeatureMatrices:
    """Padded per-element feature matrices for one (query, document) pair.

    Real rows come first; padding rows are all zero with a false mask.
    """

    R_w: np.ndarray
    R_e: np.ndarray
    A_w: np.ndarray
    A_e: np.ndarray
    word_mask: np.ndarray
    entity_mask: np.ndarray
    words: list[str] = field(default_factory=list)
    entities: list[str] = field(default_factory=list)

    def __post_init__(self):
        n, m = len(self.word_mask), len(self.entity_mask)
        shapes = {
            "R_w": (self.R_w.shape, (n, WORD_DIM)),
            "R_e": (self.R_e.shape, (m, ENTITY_DIM)),
            "A_w": (self.A_w.shape, (n, WORD_ATT_DIM)),
            "A_e": (self.A_e.shape, (m, ENTITY_ATT_DIM)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise SchemaMismatch(f"{name} has shape {got}, expected {want}")

    @property
    def n(self) -> int:
        return len(self.word_mask)

    @property
    def m(self) -> int:
        return len(self.entity_mask)

    @classmethod
    def from_rows(cls, word_rows, entity_rows, entity_att_rows, n, m, words=(), entities=()):
        n_real, m_real = len(word_rows), len(entity_rows)
        if n_real > n or m_real > m:
            raise ValueError("more elements than padding length")
        R_w = np.zeros((n, WORD_DIM))
        R_e = np.zeros((m, ENTITY_DIM))
        A_w = np.zeros((n, WORD_ATT_DIM))
        A_e = np.zeros((m, ENTITY_ATT_DIM))
        if n_real:
            R_w[:n_real] = word_rows
            A_w[:n_real] = 1.0
        if m_real:
            R_e[:m_real] = entity_rows
            A_e[:m_real] = entity_att_rows
        word_mask = np.arange(n) < n_real
        entity_mask = np.arange(m) < m_real
        return cls(R_w, R_e, A_w, A_e, word_mask, entity_mask, list(words), list(entities))

    def padded(self, n: int, m: int) -> "DuetFeatureMatrices":
        """Same features with different padding lengths."""
        return DuetFeatureMatrices.from_rows(
            self.R_w[self.word_mask],
            self.R_e[self.entity_mask],
            self.A_e[self.entity_mask],
            n,
            m,
            self.words,
            self.entities,
        )

    def to_json(self) -> dict:
        return {
            "R_w": self.R_w.tolist(),
            "R_e": self.R_e.tolist(),
            "A_w": self.A_w.tolist(),
            "A_e": self.A_e.tolist(),
            "word_mask": self.word_mask.tolist(),
            "entity_mask": self.entity_mask.tolist(),
            "words": self.words,
            "entities": self.entities,
        }

    @classmethod
    def from_json(cls, rec: Mapping) -> "DuetFeatureMatrices":
        n, m = len(rec["word_mask"]), len(rec["entity_mask"])
        return cls(
            np.array(rec["R_w"], dtype=np.float64).reshape(n, WORD_DIM),
            np.array(rec["R_e"], dtype=np.float64).reshape(m, ENTITY_DIM),
            np.array(rec["A_w"], dtype=np.float64).reshape(n, WORD_ATT_DIM),
            np.array(rec["A_e"], dtype=np.float64).reshape(m, ENTITY_ATT_DIM),
            np.array(rec["word_mask"], dtype=bool),
            np.array(rec["entity_mask"], dtype=bool),
            list(rec.get("words", [])),
            list(rec.get("entities", [])),
        )


class FeatureExtractor:
    """Builds duet matrices from loaded stores; safe to share across threads."""

    def __init__(
        self,
        stats: CollectionStats,
        kb: KnowledgeBase,
        doc_entities: Mapping[str, Mapping[str, BagOfEntities]],
        transe: EmbeddingTable | None = None,
        joint: EmbeddingTable | None = None,
        params: RetrievalParams = DEFAULT_PARAMS,
        bins: EsrBinConfig = EsrBinConfig(),
        max_words: int = 10,
        max_entities: int = 5,
    ):
        self.stats = stats
        self.kb = kb
        self.doc_entities = doc_entities
        self.transe = transe
        self.joint = joint
        self.params = params
        self.bins = bins
        self.max_words = max_words
        self.max_entities = max_entities
        self._qwde_cache: dict = {}
        _ = kb.text_stats  # computed once up front

    def build_matrices(
        self,
        query_tokens: Sequence[str],
        query_entities: BagOfEntities,
        doc: Document,
    ) -> DuetFeatureMatrices:
        words = list(dict.fromkeys(query_tokens))
        if not words:
            raise ValueError("query has no words after processing")
        if len(words) > self.max_words:
            log.warning("query %r truncated to %d words", " ".join(words), self.max_words)
            words = words[: self.max_words]
        entities = query_entities.entity_order()
        if len(entities) > self.max_entities:
            log.warning("query entities %r truncated to %d", entities, self.max_entities)
            entities = entities[: self.max_entities]
        doc_ents = self.doc_entities.get(doc.doc_id, {})

        word_rows = [
            np.concatenate(
                [
                    qw_dw_row(w, doc, self.stats, self.params),
                    qw_de_row(w, doc_ents, self.kb, self.params, self._qwde_cache),
                ]
            )
            for w in words
        ]
        entity_rows = [
            np.concatenate(
                [
                    qe_dw_row(e, doc, self.kb, self.stats, self.params),
                    qe_de_row(e, doc_ents, self.transe, self.bins),
                ]
            )
            for e in entities
        ]
        att_rows = [
            attention_row(e, query_entities.first_annotation(e), query_tokens, self.kb, self.joint)
            for e in entities
        ]
        return DuetFeatureMatrices.from_rows(
            word_rows, entity_rows, att_rows, self.max_words, self.max_entities, words, entities
        )


def column_masks(
    groups: Iterable[str] = ("all",),
    top_k: int | None = None,
    n_bins: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks over word and entity columns for feature ablations.

    ``top_k`` keeps only the first k document-entity slots of each
    word-to-entity group; ``n_bins`` keeps the first bins of each field's
    histogram (exact match first).
    """
    groups = set(groups)
    if "all" in groups:
        groups = set(FEATURE_GROUPS)
    unknown = groups - set(FEATURE_GROUPS)
    if unknown:
        raise ValueError(f"unknown feature groups {sorted(unknown)}")

    def keep(col: str) -> bool:
        parts = col.split(":")
        if parts[0] not in groups:
            return False
        if parts[0] == "qw_de" and top_k is not None and int(parts[-1]) > top_k:
            return False
        if parts[0] == "qe_de" and n_bins is not None and int(parts[-1][3:]) >= n_bins:
            return False
        return True

    return (
        np.array([keep(c) for c in WORD_COLUMNS]),
        np.array([keep(c) for c in ENTITY_COLUMNS]),
    )


def write_feature_cache(path, records: Iterable[tuple[str, str, DuetFeatureMatrices]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for qid, doc_id, mats in records:
            rec = {"schema": SCHEMA_HASH, "version": SCHEMA_VERSION, "query_id": qid, "doc_id": doc_id}
            rec.update(mats.to_json())
            f.write(json.dumps(rec) + "\n")
            n += 1
    return n


def read_feature_cache(path) -> dict[str, dict[str, DuetFeatureMatrices]]:
    out: dict[str, dict[str, DuetFeatureMatrices]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if rec.get("schema") != SCHEMA_HASH:
                raise SchemaMismatch(
                    f"{path}:{lineno}: feature schema {rec.get('schema')!r} does not match {SCHEMA_HASH!r}"
                )
            out.setdefault(rec["query_id"], {})[rec["doc_id"]] = DuetFeatureMatrices.from_json(rec)
    return out
