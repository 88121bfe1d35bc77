"""Unsupervised retrieval models used as word-level ranking features."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .corpus import FieldStats

SCORERS = ("bm25", "tfidf", "bool_or", "bool_and", "coord", "lm", "lm_jm", "lm_dir", "lm_two")
ADDITIVE_SCORERS = ("bm25", "tfidf", "coord", "lm", "lm_jm", "lm_dir", "lm_two")


@dataclass(frozen=True)
class RetrievalParams:
    k1: float = 1.2
    b: float = 0.75
    mu: float = 2500.0
    jm_lambda: float = 0.4
    two_lambda: float = 0.4
    epsilon: float = 1e-10


DEFAULT_PARAMS = RetrievalParams()


def _log_floor(x: float, eps: float) -> float:
    return math.log(max(x, eps))


def _term_score(scorer, tf_d, doc_len, term, stats: FieldStats, p: RetrievalParams) -> float:
    """Contribution of one query term occurrence (for the additive models)."""
    if scorer == "bm25":
        if tf_d == 0:
            return 0.0
        df = stats.df.get(term, 0)
        idf = math.log((stats.doc_count - df + 0.5) / (df + 0.5) + 1.0)
        avg = stats.avg_doc_len or doc_len or 1.0
        return idf * tf_d * (p.k1 + 1.0) / (tf_d + p.k1 * (1.0 - p.b + p.b * doc_len / avg))
    if scorer == "tfidf":
        if tf_d == 0:
            return 0.0
        df = max(stats.df.get(term, 0), 1)
        return tf_d * math.log(stats.doc_count / df) if stats.doc_count else 0.0
    if scorer == "coord":
        return 1.0 if tf_d > 0 else 0.0
    p_ml = tf_d / doc_len if doc_len else 0.0
    p_coll = stats.cf.get(term, 0) / stats.total_tokens if stats.total_tokens else 0.0
    if scorer == "lm":
        return _log_floor(p_ml, p.epsilon)
    if scorer == "lm_jm":
        return _log_floor((1.0 - p.jm_lambda) * p_ml + p.jm_lambda * p_coll, p.epsilon)
    dirichlet = (tf_d + p.mu * p_coll) / (doc_len + p.mu)
    if scorer == "lm_dir":
        return _log_floor(dirichlet, p.epsilon)
    if scorer == "lm_two":
        return _log_floor((1.0 - p.two_lambda) * dirichlet + p.two_lambda * p_coll, p.epsilon)
    raise ValueError(f"unknown scorer {scorer!r}")


def score(
    scorer: str,
    query_bag: Mapping[str, int],
    doc_bag: Mapping[str, int],
    stats: FieldStats,
    params: RetrievalParams = DEFAULT_PARAMS,
) -> float:
    """Score a document field bag for a query bag.

    Additive models sum ``tf_q(t) * contribution(t)`` over query terms;
    the boolean models return 0/1 and an empty query scores 0 everywhere.
    """
    if scorer not in SCORERS:
        raise ValueError(f"unknown scorer {scorer!r}")
    terms = [(t, n) for t, n in query_bag.items() if n > 0]
    if not terms:
        return 0.0
    if scorer == "bool_or":
        return 1.0 if any(doc_bag.get(t, 0) > 0 for t, _ in terms) else 0.0
    if scorer == "bool_and":
        return 1.0 if all(doc_bag.get(t, 0) > 0 for t, _ in terms) else 0.0
    doc_len = sum(doc_bag.values())
    if scorer == "coord":
        return float(sum(1 for t, _ in terms if doc_bag.get(t, 0) > 0))
    return math.fsum(n * _term_score(scorer, doc_bag.get(t, 0), doc_len, t, stats, params) for t, n in terms)


def score_singleton(
    scorer: str,
    term: str,
    doc_bag: Mapping[str, int],
    stats: FieldStats,
    params: RetrievalParams = DEFAULT_PARAMS,
) -> float:
    """Score of the one-term query ``{term: 1}``."""
    return score(scorer, {term: 1}, doc_bag, stats, params)


def exhaustive_run(corpus, queries, scorer="lm_dir", field="body", depth=100, params=DEFAULT_PARAMS):
    """Score every document for every query; a stand-in base retrieval for small corpora."""
    stats = corpus.stats[field]
    run = {}
    for qid, query in queries.items():
        qbag = {}
        for t in query.tokens:
            qbag[t] = qbag.get(t, 0) + 1
        scored = [(doc_id, score(scorer, qbag, doc.bag(field), stats, params)) for doc_id, doc in corpus.documents.items()]
        scored.sort(key=lambda ds: (-ds[1], ds[0]))
        run[qid] = scored[:depth]
    return run
