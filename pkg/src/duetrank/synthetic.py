"""Synthetic benchmarks with known structure, for tests and demos."""

from __future__ import annotations

import json

import numpy as np

from .features import ENTITY_ATT_DIM, ENTITY_DIM, WORD_DIM, DuetFeatureMatrices
from .ranker import QueryData


def _query(rng, qid, n_docs, n_rel, doc_rows, max_words=10, max_entities=5):
    """Assemble one query; ``doc_rows(relevant)`` returns (R_w, R_e, A_e) for a document."""
    rel = set(rng.choice(n_docs, size=n_rel, replace=False).tolist())
    doc_ids, mats, judgments = [], [], {}
    for i in range(n_docs):
        doc_id = f"{qid}-d{i:02d}"
        R_w, R_e, A_e = doc_rows(i in rel)
        mats.append(DuetFeatureMatrices.from_rows(R_w, R_e, A_e, max_words, max_entities))
        doc_ids.append(doc_id)
        judgments[doc_id] = int(i in rel)
    return QueryData(qid, doc_ids, mats, judgments)


def separable_dataset(
    n_queries: int = 50,
    n_docs: int = 20,
    seed: int = 0,
    column: int = 0,
    noise: float = 1.0,
    doc_noise: float = 0.0,
) -> dict[str, QueryData]:
    """Data where one word column alone orders every query perfectly.

    Every word row of a relevant document holds a value in [1, 2] in
    ``column``; non-relevant documents hold a value in [-2, -1]. The other
    columns are Gaussian distractors drawn once per query (scale ``noise``),
    so they shift all candidates of a query alike, plus optional
    per-document jitter of scale ``doc_noise``.
    """
    rng = np.random.default_rng(seed)
    data = {}
    for q in range(n_queries):
        qid = f"q{q:03d}"
        n_w = int(rng.integers(1, 4))
        n_e = int(rng.integers(0, 3))
        base_w = rng.normal(0.0, noise, size=(n_w, WORD_DIM))
        base_e = rng.normal(0.0, noise, size=(n_e, ENTITY_DIM))
        A_e = rng.uniform(0.0, 1.0, size=(n_e, ENTITY_ATT_DIM))

        def doc_rows(relevant, n_w=n_w, n_e=n_e, base_w=base_w, base_e=base_e, A_e=A_e):
            R_w = base_w + rng.normal(0.0, doc_noise, size=base_w.shape) if doc_noise else base_w.copy()
            sep = rng.uniform(1.0, 2.0, size=n_w)
            R_w[:, column] = sep if relevant else -sep
            R_e = base_e + rng.normal(0.0, doc_noise, size=base_e.shape) if doc_noise else base_e.copy()
            return R_w, R_e, A_e

        data[qid] = _query(rng, qid, n_docs, int(rng.integers(2, n_docs // 2)), doc_rows)
    return data


def noisy_entity_dataset(
    n_queries: int = 100,
    n_docs: int = 20,
    seed: int = 0,
    noise_rate: float = 0.4,
    signal_columns: int = 6,
) -> tuple[dict[str, QueryData], dict[str, list[bool]]]:
    """Queries whose entities are either clean or mis-linked.

    Clean entities carry ranking rows that rise with relevance; noisy ones
    carry rows that fall with it. Attention rows separate the two only
    statistically: clean entities tend to have low form entropy, top
    candidate status, a wide CMNS margin and high query similarity.
    Word rows hold a weak relevance signal. Returns the data and, per
    query, which of its entities are noisy.
    """
    rng = np.random.default_rng(seed)
    data, noisy = {}, {}
    for q in range(n_queries):
        qid = f"q{q:03d}"
        n_w = int(rng.integers(1, 4))
        n_e = int(rng.integers(1, 4))
        is_noise = (rng.random(n_e) < noise_rate).tolist()
        A_e = np.empty((n_e, ENTITY_ATT_DIM))
        for j, bad in enumerate(is_noise):
            if bad:
                A_e[j] = [rng.uniform(0.5, 2.0), float(rng.random() < 0.3), rng.uniform(0.0, 0.4), rng.uniform(-0.2, 0.4)]
            else:
                A_e[j] = [rng.uniform(0.0, 0.7), float(rng.random() < 0.9), rng.uniform(0.3, 1.0), rng.uniform(0.2, 0.9)]

        def doc_rows(relevant, n_w=n_w, n_e=n_e, is_noise=is_noise, A_e=A_e):
            R_w = rng.normal(0.0, 1.0, size=(n_w, WORD_DIM))
            R_w[:, 0] += 0.3 * relevant
            R_e = rng.normal(0.0, 1.0, size=(n_e, ENTITY_DIM))
            for j, bad in enumerate(is_noise):
                R_e[j, :signal_columns] += 1.0 if relevant != bad else 0.0
            return R_w, R_e, A_e

        data[qid] = _query(rng, qid, n_docs, int(rng.integers(2, 7)), doc_rows)
        noisy[qid] = is_noise
    return data, noisy


# -- a tiny file-based world for pipeline runs --------------------------------

_TOPICS = {
    "astronomy": ("telescope", "orbit", "planet", "comet", "galaxy", "observatory"),
    "cooking": ("recipe", "oven", "flour", "butter", "simmer", "spice"),
    "sailing": ("harbor", "mast", "keel", "regatta", "anchor", "tide"),
    "music": ("violin", "concerto", "rhythm", "melody", "orchestra", "chord"),
}
_ENTITIES = (
    ("E01", "Halley Comet", ("halley",), "astronomy", "periodic comet visible from earth every seventy six years"),
    ("E02", "Jupiter", ("jove",), "astronomy", "largest planet of the solar system with many moons"),
    ("E03", "Hubble Telescope", ("hubble",), "astronomy", "space telescope in low earth orbit"),
    ("E04", "Sourdough Bread", ("sourdough",), "cooking", "bread leavened by wild yeast and flour"),
    ("E05", "Saffron", (), "cooking", "expensive spice from crocus flowers"),
    ("E06", "Dutch Oven", (), "cooking", "heavy cooking pot used in the oven"),
    ("E07", "America's Cup", ("americas cup",), "sailing", "oldest international sailing regatta trophy"),
    ("E08", "Catamaran", (), "sailing", "sailing vessel with two parallel hulls"),
    ("E09", "Jupiter Harbor", ("jupiter",), "sailing", "small harbor town known for its anchor festival"),
    ("E10", "Stradivarius", ("strad",), "music", "violin crafted by the stradivari family"),
    ("E11", "Vienna Philharmonic", (), "music", "orchestra based in vienna"),
    ("E12", "Moonlight Sonata", (), "music", "piano sonata with a slow melody"),
)


def write_toy_world(directory, seed: int = 0, n_docs: int = 40) -> dict[str, str]:
    """Write a small corpus, KB, link records, queries, qrels and a base run.

    Documents mix topic words with entity mentions; each query names one
    entity and documents of that entity's topic that mention it are the
    most relevant. "Jupiter" is ambiguous between a planet and a harbor
    town, so the linker has a real decision to make. Returns the paths.
    """
    from pathlib import Path

    from .corpus import default_tokenizer, load_corpus, load_queries, write_run
    from .retrieval import exhaustive_run

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    topics = sorted(_TOPICS)
    by_topic = {t: [e for e in _ENTITIES if e[3] == t] for t in topics}
    paths = {name: str(out / name) for name in (
        "corpus.jsonl", "queries.tsv", "qrels.txt", "entities.jsonl", "triples.tsv", "mentions.tsv", "run.txt"
    )}

    with open(paths["entities.jsonl"], "w", encoding="utf-8") as f:
        for eid, name, aliases, _, desc in _ENTITIES:
            f.write(json.dumps({"entity_id": eid, "name": name, "aliases": list(aliases), "description": desc}) + "\n")
    with open(paths["triples.tsv"], "w", encoding="utf-8") as f:
        for t in topics:
            ents = by_topic[t]
            for a, b in zip(ents, ents[1:] + ents[:1]):
                f.write(f"{a[0]}\trelated_to\t{b[0]}\n")
        f.write("E02\tnamesake_of\tE09\n")

    docs, mentions = [], []
    doc_entities = {}
    for i in range(n_docs):
        topic = topics[i % len(topics)]
        ents = by_topic[topic]
        chosen = [ents[j] for j in sorted(rng.choice(len(ents), size=int(rng.integers(1, 3)), replace=False))]
        words = list(rng.choice(_TOPICS[topic], size=int(rng.integers(8, 16))))
        other = topics[(i + 1 + int(rng.integers(0, 3))) % len(topics)]
        words += list(rng.choice(_TOPICS[other], size=int(rng.integers(0, 4))))
        for e in chosen:
            surface = e[2][0] if e[2] and rng.random() < 0.3 else e[1]
            pos = int(rng.integers(0, len(words) + 1))
            words.insert(pos, surface)
            mentions.append((surface, e[0]))
        title = f"{chosen[0][1]} {rng.choice(_TOPICS[topic])}"
        doc_id = f"D{i:03d}"
        docs.append({"doc_id": doc_id, "title": title, "body": " ".join(words)})
        doc_entities[doc_id] = {e[0] for e in chosen}
    mentions.sort()
    with open(paths["corpus.jsonl"], "w", encoding="utf-8") as f:
        for d in docs:
            f.write(json.dumps(d) + "\n")
    with open(paths["mentions.tsv"], "w", encoding="utf-8") as f:
        for text, eid in mentions:
            f.write(f"{text}\t{eid}\n")

    qrels = []
    with open(paths["queries.tsv"], "w", encoding="utf-8") as f:
        for k, (eid, name, _, topic, _) in enumerate(_ENTITIES):
            qid = f"{101 + k}"
            f.write(f"{qid}\t{name} {_TOPICS[topic][k % 6]}\n")
            for i, d in enumerate(docs):
                if eid in doc_entities[d["doc_id"]]:
                    qrels.append((qid, d["doc_id"], 2))
                elif topics[i % len(topics)] == topic:
                    qrels.append((qid, d["doc_id"], 1))
                else:
                    qrels.append((qid, d["doc_id"], 0))
    with open(paths["qrels.txt"], "w", encoding="utf-8") as f:
        for qid, doc_id, g in qrels:
            f.write(f"{qid} 0 {doc_id} {g}\n")

    tok = default_tokenizer()
    corpus = load_corpus(paths["corpus.jsonl"], "jsonl", tok)
    queries = load_queries(paths["queries.tsv"], tok)
    write_run(paths["run.txt"], exhaustive_run(corpus, queries, "bm25", "body", depth=20), "base")
    return paths
