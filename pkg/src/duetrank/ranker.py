"""Attention-gated duet ranking model and its pairwise hinge training.

Per query element the matching part is a shared linear map over its
ranking row and the attention part a shared linear map followed by ReLU
over its attention row; the document score sums matching scores weighted
by attention over unmasked words and entities.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .features import (
    ENTITY_ATT_DIM,
    ENTITY_DIM,
    SCHEMA_HASH,
    WORD_ATT_DIM,
    WORD_DIM,
    DuetFeatureMatrices,
    SchemaMismatch,
)
from .metrics import ndcg_at_k

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1

# (name, size, is_weight); weights are L2-regularized, biases are not
PARAM_LAYOUT = (
    ("W_w_match", WORD_DIM, True),
    ("b_w_match", 1, False),
    ("W_e_match", ENTITY_DIM, True),
    ("b_e_match", 1, False),
    ("W_w_att", WORD_ATT_DIM, True),
    ("b_w_att", 1, False),
    ("W_e_att", ENTITY_ATT_DIM, True),
    ("b_e_att", 1, False),
)
N_PARAMS = sum(size for _, size, _ in PARAM_LAYOUT)


def _slices():
    out, start = {}, 0
    for name, size, _ in PARAM_LAYOUT:
        out[name] = slice(start, start + size)
        start += size
    return out


_SLICES = _slices()
WEIGHT_MASK = np.concatenate([np.full(size, w, dtype=bool) for _, size, w in PARAM_LAYOUT])


class ModelParams:
    """The eight parameter blocks, stored as views into one flat vector."""

    def __init__(self, vector: np.ndarray | None = None):
        if vector is None:
            vector = np.zeros(N_PARAMS)
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (N_PARAMS,):
            raise SchemaMismatch(f"parameter vector has shape {vector.shape}, expected ({N_PARAMS},)")
        self.vector = vector

    def __getattr__(self, name):
        sl = _SLICES.get(name)
        if sl is None:
            raise AttributeError(name)
        block = self.vector[sl]
        return float(block[0]) if name.startswith("b_") else block

    def block(self, name: str) -> np.ndarray:
        return self.vector[_SLICES[name]]

    def copy(self) -> "ModelParams":
        return ModelParams(self.vector.copy())

    def l2(self) -> float:
        w = self.vector[WEIGHT_MASK]
        return float(w @ w)

    def to_json(self) -> dict:
        return {name: self.block(name).tolist() for name, _, _ in PARAM_LAYOUT}

    @classmethod
    def from_json(cls, blocks: Mapping) -> "ModelParams":
        parts = []
        for name, size, _ in PARAM_LAYOUT:
            arr = np.asarray(blocks[name], dtype=np.float64).ravel()
            if arr.shape != (size,):
                raise SchemaMismatch(f"parameter block {name} has {arr.size} values, expected {size}")
            parts.append(arr)
        return cls(np.concatenate(parts))

    @classmethod
    def initial(cls, rng: np.random.Generator, scale: float = 0.01, att_bias: float = 0.1) -> "ModelParams":
        v = np.where(WEIGHT_MASK, rng.uniform(-scale, scale, N_PARAMS), 0.0)
        p = cls(v)
        p.block("b_w_att")[:] = att_bias
        p.block("b_e_att")[:] = att_bias
        return p


def _relu(x):
    return np.maximum(x, 0.0)


def forward(
    params: ModelParams,
    mats: DuetFeatureMatrices,
    flat_attention: bool = False,
    word_columns: np.ndarray | None = None,
    entity_columns: np.ndarray | None = None,
) -> float:
    """Ranking score of one document.

    Runs the batched arithmetic on a batch of one, so a document scores
    bit for bit the same alone, in a batch, or at any padding length.
    """
    scores, _ = batch_scores(params, Batch.stack([mats], word_columns, entity_columns), flat_attention)
    return float(scores[0])


def attention_weights(params: ModelParams, mats: DuetFeatureMatrices) -> tuple[np.ndarray, np.ndarray]:
    """Attention of the real words and entities."""
    a_w = _relu(np.einsum("nk,k->n", mats.A_w[mats.word_mask], params.W_w_att) + params.b_w_att)
    a_e = _relu(np.einsum("mk,k->m", mats.A_e[mats.entity_mask], params.W_e_att) + params.b_e_att)
    return a_w, a_e


@dataclass
class Batch:
    """Stacked matrices of several documents sharing padding lengths."""

    R_w: np.ndarray  # (D, n, WORD_DIM)
    A_w: np.ndarray  # (D, n, 1)
    w_mask: np.ndarray  # (D, n) float
    R_e: np.ndarray  # (D, m, ENTITY_DIM)
    A_e: np.ndarray  # (D, m, 4)
    e_mask: np.ndarray  # (D, m) float

    @classmethod
    def stack(cls, mats: Sequence[DuetFeatureMatrices], word_columns=None, entity_columns=None) -> "Batch":
        n = max((x.n for x in mats), default=0)
        m = max((x.m for x in mats), default=0)
        mats = [x if (x.n, x.m) == (n, m) else x.padded(n, m) for x in mats]
        R_w = np.stack([x.R_w for x in mats]) if mats else np.zeros((0, n, WORD_DIM))
        R_e = np.stack([x.R_e for x in mats]) if mats else np.zeros((0, m, ENTITY_DIM))
        if word_columns is not None:
            R_w = R_w * word_columns
        if entity_columns is not None:
            R_e = R_e * entity_columns
        return cls(
            R_w,
            np.stack([x.A_w for x in mats]) if mats else np.zeros((0, n, WORD_ATT_DIM)),
            np.stack([x.word_mask for x in mats]).astype(np.float64) if mats else np.zeros((0, n)),
            R_e,
            np.stack([x.A_e for x in mats]) if mats else np.zeros((0, m, ENTITY_ATT_DIM)),
            np.stack([x.entity_mask for x in mats]).astype(np.float64) if mats else np.zeros((0, m)),
        )

    def __len__(self):
        return self.R_w.shape[0]


def _row_sum(x: np.ndarray) -> np.ndarray:
    """Sum over axis 1 in index order, so trailing zero padding leaves every bit unchanged."""
    total = np.zeros(x.shape[0])
    for i in range(x.shape[1]):
        total = total + x[:, i]
    return total


def batch_scores(params: ModelParams, batch: Batch, flat_attention: bool = False):
    """Scores of every document plus the intermediates the gradient needs."""
    # einsum rather than BLAS: BLAS results can depend on how many rows are padded
    F_w = np.einsum("dnk,k->dn", batch.R_w, params.W_w_match) + params.b_w_match
    F_e = np.einsum("dmk,k->dm", batch.R_e, params.W_e_match) + params.b_e_match
    if flat_attention:
        z_w = z_e = None
        a_w, a_e = batch.w_mask, batch.e_mask
    else:
        z_w = np.einsum("dnk,k->dn", batch.A_w, params.W_w_att) + params.b_w_att
        z_e = np.einsum("dmk,k->dm", batch.A_e, params.W_e_att) + params.b_e_att
        a_w = _relu(z_w) * batch.w_mask
        a_e = _relu(z_e) * batch.e_mask
    scores = _row_sum(F_w * a_w) + _row_sum(F_e * a_e)
    return scores, (F_w, F_e, z_w, z_e, a_w, a_e)


def batch_score_gradient(
    params: ModelParams,
    batch: Batch,
    coef: np.ndarray,
    flat_attention: bool = False,
    cache=None,
) -> np.ndarray:
    """Gradient of ``sum_d coef[d] * f(d)`` as a flat parameter vector.

    ReLU uses derivative 0 at its kink. ``cache`` is the second value
    returned by :func:`batch_scores` for the same parameters.
    """
    if cache is None:
        _, cache = batch_scores(params, batch, flat_attention)
    F_w, F_e, z_w, z_e, a_w, a_e = cache
    g = np.zeros(N_PARAMS)
    cw = coef[:, None] * a_w  # d f / d F_w, weighted
    ce = coef[:, None] * a_e
    g[_SLICES["W_w_match"]] = np.einsum("dn,dnk->k", cw, batch.R_w)
    g[_SLICES["b_w_match"]] = cw.sum()
    g[_SLICES["W_e_match"]] = np.einsum("dm,dmk->k", ce, batch.R_e)
    g[_SLICES["b_e_match"]] = ce.sum()
    if not flat_attention:
        gw = coef[:, None] * F_w * (z_w > 0) * batch.w_mask
        ge = coef[:, None] * F_e * (z_e > 0) * batch.e_mask
        g[_SLICES["W_w_att"]] = np.einsum("dn,dnk->k", gw, batch.A_w)
        g[_SLICES["b_w_att"]] = gw.sum()
        g[_SLICES["W_e_att"]] = np.einsum("dm,dmk->k", ge, batch.A_e)
        g[_SLICES["b_e_att"]] = ge.sum()
    return g


def pair_loss(
    params: ModelParams,
    pos: DuetFeatureMatrices,
    neg: DuetFeatureMatrices,
    l2: float = 0.0,
    flat_attention: bool = False,
) -> float:
    """``[1 - f(pos) + f(neg)]_+ + l2 * sum of squared weights``."""
    margin = 1.0 - forward(params, pos, flat_attention) + forward(params, neg, flat_attention)
    return max(0.0, margin) + l2 * params.l2()


def pair_gradient(
    params: ModelParams,
    pos: DuetFeatureMatrices,
    neg: DuetFeatureMatrices,
    l2: float = 0.0,
    flat_attention: bool = False,
) -> ModelParams:
    """Exact (sub)gradient of :func:`pair_loss`; the hinge kink has derivative 0."""
    batch = Batch.stack([pos, neg])
    scores, _ = batch_scores(params, batch, flat_attention)
    grad = 2.0 * l2 * np.where(WEIGHT_MASK, params.vector, 0.0)
    if 1.0 - scores[0] + scores[1] > 0.0:
        grad = grad + batch_score_gradient(params, batch, np.array([-1.0, 1.0]), flat_attention)
    return ModelParams(grad)


class Nadam:
    """Adam with Nesterov momentum."""

    def __init__(self, lr=0.002, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        nesterov = b1 * m_hat + (1 - b1) * grad / (1 - b1**self.t)
        return x - self.lr * nesterov / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainConfig:
    l2_grid: tuple[float, ...] = (0.0, 0.001, 0.01, 0.1)
    max_epochs: int = 300
    patience: int = 20
    min_epochs: int = 100  # warm-up before dev checkpointing and early stopping
    learning_rate: float = 0.002
    seed: int = 0
    flat_attention: bool = False
    unjudged_as_negative: bool = False
    cutoff: int = 20
    init_scale: float = 0.01
    att_bias_init: float = 0.1
    word_columns: np.ndarray | None = None
    entity_columns: np.ndarray | None = None

    def __post_init__(self):
        self.l2_grid = tuple(sorted(float(x) for x in self.l2_grid))
        if not self.l2_grid:
            raise ValueError("l2_grid must not be empty")
        if self.max_epochs < 1 or self.patience < 1 or self.learning_rate <= 0:
            raise ValueError("invalid training configuration")


@dataclass
class QueryData:
    """Candidate documents of one query with their features and judgments."""

    query_id: str
    doc_ids: list[str]
    matrices: list[DuetFeatureMatrices]
    judgments: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.doc_ids) != len(self.matrices):
            raise ValueError("doc_ids and matrices must align")


def make_query_data(
    features: Mapping[str, Mapping[str, DuetFeatureMatrices]],
    qrels: Mapping[str, Mapping[str, int]],
    candidates: Mapping[str, Sequence[str]] | None = None,
) -> dict[str, QueryData]:
    """Join cached features with judgments; candidates default to every cached doc."""
    data = {}
    for qid in sorted(features):
        docs = list(candidates[qid]) if candidates is not None and qid in candidates else sorted(features[qid])
        missing = [d for d in docs if d not in features[qid]]
        if missing:
            raise KeyError(f"query {qid}: no features for documents {missing[:5]}")
        data[qid] = QueryData(qid, docs, [features[qid][d] for d in docs], dict(qrels.get(qid, {})))
    return data


@dataclass
class _Prepared:
    batch: Batch
    query_slices: list[tuple[QueryData, slice]]
    pos: np.ndarray
    neg: np.ndarray


def _prepare(queries: Sequence[QueryData], cfg: TrainConfig) -> _Prepared:
    mats, slices, pos, neg = [], [], [], []
    for q in queries:
        start = len(mats)
        mats.extend(q.matrices)
        slices.append((q, slice(start, len(mats))))
        rel, non = [], []
        for i, d in enumerate(q.doc_ids):
            g = q.judgments.get(d)
            if g is None:
                if cfg.unjudged_as_negative:
                    non.append(start + i)
            elif g > 0:
                rel.append(start + i)
            else:
                non.append(start + i)
        for r in rel:
            pos.extend([r] * len(non))
            neg.extend(non)
    return _Prepared(
        Batch.stack(mats, cfg.word_columns, cfg.entity_columns),
        slices,
        np.array(pos, dtype=np.int64),
        np.array(neg, dtype=np.int64),
    )


def _order(doc_ids: Sequence[str], scores: np.ndarray) -> list[tuple[str, float]]:
    return sorted(zip(doc_ids, scores.tolist()), key=lambda ds: (-ds[1], ds[0]))


def _mean_ndcg(params: ModelParams, prep: _Prepared, cfg: TrainConfig) -> float:
    if not len(prep.batch):
        return 0.0
    scores, _ = batch_scores(params, prep.batch, cfg.flat_attention)
    vals = []
    for q, sl in prep.query_slices:
        ranked = [d for d, _ in _order(q.doc_ids, scores[sl])]
        v = ndcg_at_k(ranked, q.judgments, cfg.cutoff)
        if v is not None:
            vals.append(v)
    return float(np.mean(vals)) if vals else 0.0


def objective_gradient(params: ModelParams, prep: _Prepared, l2: float, flat_attention: bool):
    """Mean pair hinge loss plus L2 penalty, and its gradient."""
    scores, cache = batch_scores(params, prep.batch, flat_attention)
    hinge = 1.0 - scores[prep.pos] + scores[prep.neg]
    active = hinge > 0.0
    n_pairs = len(prep.pos)
    loss = hinge[active].sum() / n_pairs + l2 * params.l2()
    coef = np.zeros(len(prep.batch))
    np.add.at(coef, prep.pos[active], -1.0 / n_pairs)
    np.add.at(coef, prep.neg[active], 1.0 / n_pairs)
    grad = batch_score_gradient(params, prep.batch, coef, flat_attention, cache)
    grad += 2.0 * l2 * np.where(WEIGHT_MASK, params.vector, 0.0)
    return loss, grad


@dataclass
class TrainLog:
    selected_l2: float
    dev_ndcg: dict[float, float]
    best_epoch: dict[float, int]
    loss_trace: dict[float, list[float]]


@dataclass
class RankerModel:
    params: ModelParams
    flat_attention: bool = False
    word_columns: np.ndarray | None = None
    entity_columns: np.ndarray | None = None
    l2: float = 0.0

    def score(self, mats: DuetFeatureMatrices) -> float:
        return forward(self.params, mats, self.flat_attention, self.word_columns, self.entity_columns)

    def save(self, path) -> None:
        rec = {
            "format": MODEL_FORMAT_VERSION,
            "schema": SCHEMA_HASH,
            "flat_attention": self.flat_attention,
            "l2": self.l2,
            "word_columns": None if self.word_columns is None else self.word_columns.astype(bool).tolist(),
            "entity_columns": None if self.entity_columns is None else self.entity_columns.astype(bool).tolist(),
            "params": self.params.to_json(),
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(rec, f, indent=1)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "RankerModel":
        with open(path, encoding="utf-8") as f:
            rec = json.load(f)
        if rec.get("schema") != SCHEMA_HASH:
            raise SchemaMismatch(f"model {path} was trained on feature schema {rec.get('schema')!r}, not {SCHEMA_HASH!r}")
        if rec.get("format") != MODEL_FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported model format {rec.get('format')!r}")
        wc, ec = rec.get("word_columns"), rec.get("entity_columns")
        return cls(
            ModelParams.from_json(rec["params"]),
            bool(rec.get("flat_attention", False)),
            None if wc is None else np.array(wc, dtype=np.float64),
            None if ec is None else np.array(ec, dtype=np.float64),
            float(rec.get("l2", 0.0)),
        )


def _fit(prep: _Prepared, dev: _Prepared, l2: float, cfg: TrainConfig):
    """Nadam on the full batch with dev-NDCG checkpointing.

    A checkpoint is better when its dev NDCG is higher, or equal with a
    lower training objective; patience counts epochs without a better
    checkpoint, starting after the warm-up.
    """
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams.initial(rng, cfg.init_scale, cfg.att_bias_init)
    opt = Nadam(lr=cfg.learning_rate)
    best, best_key, best_epoch = params.copy(), None, 0
    since_improved = 0
    trace = []
    # epoch e evaluates the parameters after e updates
    for epoch in range(cfg.max_epochs + 1):
        loss, grad = objective_gradient(params, prep, l2, cfg.flat_attention)
        trace.append(loss)
        if epoch >= min(cfg.min_epochs, cfg.max_epochs):
            key = (_mean_ndcg(params, dev, cfg), -loss)
            if best_key is None or key > best_key:
                best, best_key, best_epoch = params.copy(), key, epoch
                since_improved = 0
            else:
                since_improved += 1
                if since_improved >= cfg.patience:
                    break
        if epoch < cfg.max_epochs:
            params = ModelParams(opt.step(params.vector, grad))
    return best, best_key[0], best_epoch, trace


def train(
    train_queries: Sequence[QueryData],
    dev_queries: Sequence[QueryData] = (),
    config: TrainConfig | None = None,
) -> tuple[RankerModel, TrainLog]:
    """Train one model per L2 weight and keep the best on the dev queries.

    Dev NDCG ties go to the smaller weight. Without dev queries the
    training queries are used for selection.
    """
    cfg = config or TrainConfig()
    prep = _prepare(train_queries, cfg)
    if not len(prep.pos):
        raise ValueError("no (relevant, non-relevant) training pairs")
    dev = _prepare(dev_queries, cfg) if dev_queries else prep
    results = {}
    for l2 in cfg.l2_grid:
        results[l2] = _fit(prep, dev, l2, cfg)
        log.debug("l2=%g dev ndcg=%.4f epoch=%d", l2, results[l2][1], results[l2][2])
    chosen = min(cfg.l2_grid, key=lambda l2: (-results[l2][1], l2))
    model = RankerModel(results[chosen][0], cfg.flat_attention, cfg.word_columns, cfg.entity_columns, chosen)
    train_log = TrainLog(
        chosen,
        {l2: r[1] for l2, r in results.items()},
        {l2: r[2] for l2, r in results.items()},
        {l2: r[3] for l2, r in results.items()},
    )
    return model, train_log


def rank(
    model: RankerModel,
    candidates: Mapping[str, DuetFeatureMatrices],
    doc_ids: Sequence[str] | None = None,
) -> list[tuple[str, float]]:
    """Score and sort candidates (score descending, doc id ascending on ties)."""
    doc_ids = list(candidates) if doc_ids is None else list(doc_ids)
    scored = []
    for d in doc_ids:
        if d not in candidates:
            raise KeyError(f"no features for candidate document {d!r}")
        scored.append((d, model.score(candidates[d])))
    return sorted(scored, key=lambda ds: (-ds[1], ds[0]))
