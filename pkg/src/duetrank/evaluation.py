"""K-fold cross-validation of the duet ranker."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .metrics import MetricReport, evaluate
from .ranker import QueryData, RankerModel, TrainConfig, TrainLog, rank, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Fold:
    train: tuple[str, ...]
    dev: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    """Query partitions: each fold tests one group, develops on the next, trains on the rest."""

    folds: tuple[Fold, ...]
    seed: int

    @classmethod
    def make(cls, query_ids: Sequence[str], n_folds: int = 10, seed: int = 0) -> "FoldPlan":
        qids = sorted(set(query_ids))
        if n_folds < 3:
            raise ValueError("need at least 3 folds for train/dev/test splits")
        if len(qids) < n_folds:
            raise ValueError(f"{len(qids)} queries cannot fill {n_folds} folds")
        rng = np.random.default_rng(seed)
        shuffled = [qids[i] for i in rng.permutation(len(qids))]
        groups = [tuple(shuffled[i::n_folds]) for i in range(n_folds)]
        folds = []
        for i in range(n_folds):
            dev_i = (i + 1) % n_folds
            train_ids = tuple(q for j, g in enumerate(groups) if j not in (i, dev_i) for q in g)
            folds.append(Fold(train_ids, groups[dev_i], groups[i]))
        return cls(tuple(folds), seed)

    def __len__(self):
        return len(self.folds)


@dataclass
class CVResult:
    run: dict[str, list[tuple[str, float]]]
    ndcg: MetricReport
    err: MetricReport
    plan: FoldPlan
    fold_logs: list[TrainLog] = field(default_factory=list)
    models: list[RankerModel] = field(default_factory=list)


def cross_validate(
    data: Mapping[str, QueryData],
    config: TrainConfig | None = None,
    n_folds: int = 10,
    seed: int | None = None,
    qrels: Mapping[str, Mapping[str, int]] | None = None,
    cutoff: int = 20,
    max_grade: int = 4,
) -> CVResult:
    """Train per fold, rank each fold's test queries, and evaluate the union once."""
    cfg = config or TrainConfig()
    plan = FoldPlan.make(list(data), n_folds, cfg.seed if seed is None else seed)
    run: dict[str, list[tuple[str, float]]] = {}
    logs, models = [], []
    for i, fold in enumerate(plan.folds):
        model, train_log = train([data[q] for q in fold.train], [data[q] for q in fold.dev], cfg)
        logs.append(train_log)
        models.append(model)
        for q in fold.test:
            qd = data[q]
            run[q] = rank(model, dict(zip(qd.doc_ids, qd.matrices)), qd.doc_ids)
        log.info("fold %d: l2=%g", i, train_log.selected_l2)
    source = qrels if qrels is not None else {q: d.judgments for q, d in data.items()}
    judgments = {q: source.get(q, {}) for q in data}
    ordered = {q: run[q] for q in sorted(run)}
    ranked_ids = {q: [d for d, _ in r] for q, r in ordered.items()}
    ndcg = evaluate(ranked_ids, judgments, f"ndcg@{cutoff}")
    err = evaluate(ranked_ids, judgments, f"err@{cutoff}", max_grade)
    return CVResult(ordered, ndcg, err, plan, logs, models)
