"""Graded relevance metrics, win/tie/loss counts, and a paired randomization test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


def _gain(grade) -> float:
    return 2.0 ** max(grade, 0) - 1.0


def dcg_at_k(grades: Sequence[int], k: int) -> float:
    return math.fsum(_gain(g) / math.log2(r + 1) for r, g in enumerate(grades[:k], 1))


def ndcg_at_k(ranked: Sequence[str], judgments: Mapping[str, int], k: int = 20) -> float | None:
    """NDCG@k with gains ``2^g - 1`` and ``log2(rank + 1)`` discounts.

    Unjudged documents have grade 0. Returns ``None`` when no judged
    document has positive gain (the query cannot be evaluated).
    """
    ideal = dcg_at_k(sorted(judgments.values(), reverse=True), k)
    if ideal == 0.0:
        return None
    return dcg_at_k([judgments.get(d, 0) for d in ranked], k) / ideal


def err_at_k(ranked: Sequence[str], judgments: Mapping[str, int], k: int = 20, max_grade: int = 4) -> float:
    """Expected reciprocal rank with stop probability ``(2^g - 1) / 2^max_grade``."""
    err, p_continue = 0.0, 1.0
    denom = 2.0**max_grade
    for r, d in enumerate(ranked[:k], 1):
        stop = _gain(judgments.get(d, 0)) / denom
        err += p_continue * stop / r
        p_continue *= 1.0 - stop
    return err


def has_relevant(judgments: Mapping[str, int]) -> bool:
    return any(g > 0 for g in judgments.values())


@dataclass
class MetricReport:
    metric: str
    k: int
    per_query: dict[str, float] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return math.fsum(self.per_query.values()) / len(self.per_query) if self.per_query else 0.0


def parse_metric(name: str) -> tuple[str, int]:
    """``"ndcg@20"`` -> ``("ndcg", 20)``."""
    base, _, cutoff = name.strip().lower().partition("@")
    if base not in ("ndcg", "err"):
        raise ValueError(f"unsupported metric {name!r}")
    return base, int(cutoff) if cutoff else 20


def evaluate(
    run: Mapping[str, Sequence[str]],
    qrels: Mapping[str, Mapping[str, int]],
    metric: str = "ndcg@20",
    max_grade: int = 4,
) -> MetricReport:
    """Evaluate ranked doc-id lists. Queries without a relevant judgment are skipped.

    Judged queries missing from the run count as an empty ranking.
    """
    base, k = parse_metric(metric)
    report = MetricReport(f"{base}@{k}", k)
    for qid in sorted(set(run) | set(qrels)):
        judgments = qrels.get(qid, {})
        if not has_relevant(judgments):
            report.skipped.append(qid)
            continue
        ranked = list(run.get(qid, []))
        if base == "ndcg":
            report.per_query[qid] = ndcg_at_k(ranked, judgments, k)
        else:
            report.per_query[qid] = err_at_k(ranked, judgments, k, max_grade)
    return report


def win_tie_loss(a: Mapping[str, float], b: Mapping[str, float], epsilon: float = 1e-6) -> tuple[int, int, int]:
    """Count queries where ``a`` beats, ties, or trails ``b``."""
    if set(a) != set(b):
        raise ValueError("win/tie/loss needs the same query set on both sides")
    wins = ties = losses = 0
    for q in a:
        d = a[q] - b[q]
        if abs(d) < epsilon:
            ties += 1
        elif d > 0:
            wins += 1
        else:
            losses += 1
    return wins, ties, losses


def permutation_test(
    a: Mapping[str, float] | Sequence[float],
    b: Mapping[str, float] | Sequence[float],
    iterations: int = 100_000,
    seed: int = 0,
    chunk: int = 10_000,
) -> float:
    """Two-sided paired randomization test on the mean difference.

    Each iteration swaps every query's pair with probability 1/2. The
    p-value is ``(hits + 1) / (iterations + 1)``.
    """
    if isinstance(a, Mapping):
        if set(a) != set(b):
            raise ValueError("paired test needs the same query set on both sides")
        keys = sorted(a)
        a, b = [a[k] for k in keys], [b[k] for k in keys]
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if len(diff) < 2:
        raise ValueError("permutation test needs at least two queries")
    observed = abs(diff.mean())
    # tolerance absorbs summation-order noise so exact ties count as hits
    threshold = observed - 1e-12 * max(1.0, observed)
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < iterations:
        size = min(chunk, iterations - done)
        signs = rng.integers(0, 2, size=(size, len(diff))) * 2 - 1
        means = np.abs(signs @ diff) / len(diff)
        hits += int((means >= threshold).sum())
        done += size
    return (hits + 1) / (iterations + 1)
