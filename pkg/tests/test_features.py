"""Duet feature rows, matrices, histogram bins and the feature cache."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duetrank.corpus import Corpus, Document, FormatError, Tokenizer
from duetrank.embeddings import EmbeddingTable
from duetrank.features import (
    ATTENTION_COLUMNS,
    ENTITY_COLUMNS,
    ENTITY_DIM,
    MISSING_ENTITY_SCORE,
    QE_DE_COLUMNS,
    QE_DW_COLUMNS,
    QW_DE_COLUMNS,
    QW_DW_COLUMNS,
    SCHEMA_HASH,
    WORD_COLUMNS,
    WORD_DIM,
    DuetFeatureMatrices,
    EsrBinConfig,
    FeatureExtractor,
    SchemaMismatch,
    attention_row,
    column_masks,
    esr_bin_counts,
    esr_similarity,
    qe_de_row,
    qe_dw_row,
    qw_de_row,
    qw_dw_row,
    read_feature_cache,
    write_feature_cache,
)
from duetrank.kb import Entity, KnowledgeBase, SurfaceForm
from duetrank.linker import BagOfEntities, Linker

from _esr_oracle import brute_force_bins

TOK = Tokenizer("none", frozenset())


@pytest.fixture(scope="module")
def world():
    ents = [
        Entity("E1", "red apple", description="sweet fruit tree"),
        Entity("E2", "green apple", description="sour fruit"),
        Entity("E3", "banana", description=""),
        Entity("E4", "cherry", description="small red fruit"),
    ]
    forms = [
        SurfaceForm("apple", 10, 8, {"E1": 6, "E2": 2}),
        SurfaceForm("banana", 4, 4, {"E3": 4}),
        SurfaceForm("cherry", 5, 5, {"E4": 5}),
    ]
    kb = KnowledgeBase(ents, [], forms, tokenizer=TOK)
    docs = [
        Document("d1", TOK("red apple"), TOK("apple tree fruit apple")),
        Document("d2", TOK("banana"), TOK("banana split")),
        Document("d3", [], []),
    ]
    corpus = Corpus.from_documents(docs)
    doc_entities = {
        "d1": {"title": BagOfEntities.from_counts({"E1": 1}), "body": BagOfEntities.from_counts({"E1": 2, "E2": 1})},
        "d2": {"title": BagOfEntities.from_counts({"E3": 1}), "body": BagOfEntities.from_counts({"E3": 1, "E4": 1})},
    }
    transe = EmbeddingTable(
        ["E1", "E2", "E3", "E4"],
        np.array([[0.5, 0.5], [0.5, -0.5], [-1.0, 0.2], [0.4, 0.6]]),
        "transe-entity",
    )
    joint = EmbeddingTable(["apple", "fruit", "E1", "E2"], np.array([[1.0, 0], [1.0, 0.2], [1.0, 0.1], [0, 1.0]]))
    return {"kb": kb, "corpus": corpus, "doc_entities": doc_entities, "transe": transe, "joint": joint}


class TestSchema:
    def test_dimensions(self):
        assert (len(QW_DW_COLUMNS), len(QW_DE_COLUMNS), WORD_DIM) == (18, 48, 66)
        assert (len(QE_DW_COLUMNS), len(QE_DE_COLUMNS), ENTITY_DIM) == (24, 12, 36)
        assert len(ATTENTION_COLUMNS) == 4

    def test_columns_unique(self):
        assert len(set(WORD_COLUMNS)) == WORD_DIM
        assert len(set(ENTITY_COLUMNS)) == ENTITY_DIM

    def test_column_order(self):
        assert QW_DW_COLUMNS[:3] == ["qw_dw:bm25:title", "qw_dw:bm25:body", "qw_dw:tfidf:title"]
        assert QE_DE_COLUMNS[0] == "qe_de:title:bin0" and QE_DE_COLUMNS[6] == "qe_de:body:bin0"

    def test_hash_frozen(self):
        # changing any column, bin edge or sentinel must change this value
        assert SCHEMA_HASH == "89fb695027d35cfa"


class TestRows:
    def test_qw_dw_absent_word(self, world):
        c = world["corpus"]
        row = qw_dw_row("zebra", c["d1"], c.stats)
        assert row.shape == (18,)
        lm_cols = [i for i, col in enumerate(QW_DW_COLUMNS) if ":lm" in col]
        assert not row[[i for i in range(18) if i not in lm_cols]].any()
        assert (row[lm_cols] < 0).all()

    def test_qw_dw_empty_fields(self, world):
        c = world["corpus"]
        row = dict(zip(QW_DW_COLUMNS, qw_dw_row("apple", c["d3"], c.stats)))
        for s in ("bm25", "tfidf", "coord", "bool_or", "bool_and"):
            assert row[f"qw_dw:{s}:body"] == 0.0
        assert row["qw_dw:lm:body"] == pytest.approx(math.log(1e-10))

    def test_qe_dw(self, world):
        c = world["corpus"]
        row = dict(zip(QE_DW_COLUMNS, qe_dw_row("E1", c["d1"], world["kb"], c.stats)))
        assert len(row) == 24
        assert row["qe_dw:bool_and:name:title"] == 1.0
        assert row["qe_dw:coord:description:body"] == 2.0

    def test_qe_dw_empty_description(self, world):
        c = world["corpus"]
        row = dict(zip(QE_DW_COLUMNS, qe_dw_row("E3", c["d2"], world["kb"], c.stats)))
        assert row["qe_dw:bool_or:description:body"] == 0.0
        assert row["qe_dw:bool_or:name:body"] == 1.0

    def test_qw_de_padding(self, world):
        row = qw_de_row("apple", world["doc_entities"]["d1"], world["kb"])
        assert row.shape == (48,)
        named = dict(zip(QW_DE_COLUMNS, row))
        # one title entity: slots 2 and 3 are the sentinel
        assert named["qw_de:coord:title:name:1"] == 1.0
        assert named["qw_de:coord:title:name:2"] == MISSING_ENTITY_SCORE
        assert named["qw_de:coord:title:name:3"] == MISSING_ENTITY_SCORE
        body = [named[f"qw_de:coord:body:name:{k}"] for k in range(1, 6)]
        assert body == [1.0, 1.0, -20.0, -20.0, -20.0]

    def test_qw_de_sorted_sentinel_suffix(self, world):
        for doc in ("d1", "d2", "d3"):
            row = qw_de_row("fruit", world["doc_entities"].get(doc, {}), world["kb"])
            start = 0
            for k in (3, 3, 5, 5) * 3:
                group = list(row[start : start + k])
                start += k
                assert group == sorted(group, reverse=True)
                assert all(v >= MISSING_ENTITY_SCORE for v in group)
                real = [v for v in group if v != MISSING_ENTITY_SCORE]
                assert group[: len(real)] == real

    def test_esr_similarity(self):
        t = EmbeddingTable(["a", "b", "z"], np.array([[0.5, 0.5], [0.5, -0.5], [0.0, 0.0]]))
        assert esr_similarity("a", "a", None) == 1.0
        assert esr_similarity("a", "b", t) == pytest.approx(0.5)
        assert esr_similarity("a", "nope", t) == 0.0
        assert esr_similarity("a", "z", t) == 0.0

    def test_exact_bin(self, world):
        row = qe_de_row("E1", {"body": BagOfEntities.from_counts({"E1": 2})}, world["transe"])
        assert row[6] == pytest.approx(math.log(3))
        assert not np.delete(row, 6).any()

    def test_empty_entities(self, world):
        assert not qe_de_row("E1", {}, world["transe"]).any()

    def test_bin_config_validation(self):
        with pytest.raises(ValueError):
            EsrBinConfig((0.9, 0.5, 0.6, 0.2, 0.0))
        assert EsrBinConfig().bin_index(1.0, identical=False) == 1
        assert EsrBinConfig().bin_index(0.8, identical=False) == 1
        assert EsrBinConfig().bin_index(0.79, identical=False) == 2
        assert EsrBinConfig().bin_index(0.0, identical=False) == 5

    @settings(max_examples=200, deadline=None)
    @given(
        st.sampled_from(["E0", "E1", "E2", "E3", "E4", "E5"]),
        st.dictionaries(st.sampled_from(["E0", "E1", "E2", "E3", "E4", "E5", "X"]), st.integers(1, 4), max_size=6),
        st.integers(0, 10_000),
    )
    def test_bins_match_brute_force(self, qe, doc_counts, seed):
        rng = np.random.default_rng(seed)
        vectors = {f"E{i}": rng.normal(size=3) for i in range(6)}
        table = EmbeddingTable(sorted(vectors), np.array([vectors[k] for k in sorted(vectors)]), "transe-entity")
        got = esr_bin_counts(qe, BagOfEntities.from_counts(doc_counts), table)
        assert got == brute_force_bins(qe, doc_counts, vectors)
        assert got[0] == doc_counts.get(qe, 0)
        assert sum(got) == sum(doc_counts.values())

    def test_attention_two_candidates(self, world):
        ann = Linker(world["kb"]).annotate(["apple"]).annotations[0]
        row = attention_row("E1", ann, ["apple"], world["kb"], world["joint"])
        entropy = -(0.75 * math.log(0.75) + 0.25 * math.log(0.25))
        assert row[0] == pytest.approx(entropy)
        assert row[1] == 1.0
        assert row[2] == pytest.approx(0.5)
        assert row[3] == pytest.approx(1.0 / math.hypot(1.0, 0.1))

    def test_attention_runner_up(self, world):
        from duetrank.linker import Annotation

        row = attention_row("E2", Annotation("E2", 0, 1, "apple", 0.25), ["apple"], world["kb"], None)
        assert row[1] == 0.0
        assert row[2] == pytest.approx(0.25)
        assert row[3] == 0.0

    def test_attention_sole_candidate(self, world):
        ann = Linker(world["kb"]).annotate(["banana"]).annotations[0]
        assert list(attention_row("E3", ann, ["banana"], world["kb"], world["joint"])) == [0.0, 1.0, 1.0, 0.0]


class TestMatrices:
    def extractor(self, world, **kw):
        return FeatureExtractor(
            world["corpus"].stats, world["kb"], world["doc_entities"], world["transe"], world["joint"], **kw
        )

    def test_shapes_and_masks(self, world):
        ex = self.extractor(world, max_words=5, max_entities=5)
        q_ents = Linker(world["kb"]).annotate(["apple", "banana"])
        mats = ex.build_matrices(["apple", "banana", "fruit"], q_ents, world["corpus"]["d1"])
        assert list(mats.word_mask) == [True, True, True, False, False]
        assert list(mats.entity_mask) == [True, True, False, False, False]
        assert (mats.A_w[:3] == 1.0).all() and not mats.A_w[3:].any()
        assert mats.entities == ["E1", "E3"]
        assert not mats.R_w[3:].any() and not mats.R_e[2:].any()

    def test_no_entities(self, world):
        mats = self.extractor(world).build_matrices(["fruit"], BagOfEntities(), world["corpus"]["d2"])
        assert not mats.entity_mask.any()
        assert not mats.R_e.any()

    def test_repeated_words_collapse(self, world):
        mats = self.extractor(world).build_matrices(["apple", "apple"], BagOfEntities(), world["corpus"]["d1"])
        assert mats.word_mask.sum() == 1

    def test_empty_query(self, world):
        with pytest.raises(ValueError):
            self.extractor(world).build_matrices([], BagOfEntities(), world["corpus"]["d1"])

    def test_truncation(self, world, caplog):
        mats = self.extractor(world, max_words=2).build_matrices(["a", "b", "c"], BagOfEntities(), world["corpus"]["d1"])
        assert mats.words == ["a", "b"]
        assert "truncated" in caplog.text

    def test_pure(self, world):
        q = Linker(world["kb"]).annotate(["apple", "cherry"])
        a = self.extractor(world).build_matrices(["apple", "cherry"], q, world["corpus"]["d2"])
        b = self.extractor(world).build_matrices(["apple", "cherry"], q, world["corpus"]["d2"])
        assert all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("R_w", "R_e", "A_w", "A_e"))

    def test_padded_keeps_rows(self, world):
        q = Linker(world["kb"]).annotate(["apple"])
        mats = self.extractor(world).build_matrices(["apple", "fruit"], q, world["corpus"]["d1"])
        small = mats.padded(2, 1)
        assert small.R_w.shape == (2, WORD_DIM)
        assert np.array_equal(small.R_w, mats.R_w[:2])
        with pytest.raises(ValueError):
            mats.padded(1, 1)

    def test_shape_validation(self):
        with pytest.raises(SchemaMismatch):
            DuetFeatureMatrices(
                np.zeros((2, 65)), np.zeros((1, 36)), np.zeros((2, 1)), np.zeros((1, 4)),
                np.ones(2, bool), np.ones(1, bool),
            )


class TestCache:
    def test_round_trip(self, world, tmp_path):
        q = Linker(world["kb"]).annotate(["apple"])
        ex = FeatureExtractor(world["corpus"].stats, world["kb"], world["doc_entities"], world["transe"], world["joint"])
        mats = ex.build_matrices(["apple", "tree"], q, world["corpus"]["d1"])
        path = tmp_path / "cache.jsonl"
        assert write_feature_cache(path, [("q1", "d1", mats)]) == 1
        back = read_feature_cache(path)["q1"]["d1"]
        for k in ("R_w", "R_e", "A_w", "A_e", "word_mask", "entity_mask"):
            assert np.array_equal(getattr(back, k), getattr(mats, k))
        assert back.words == ["apple", "tree"]

    def test_schema_mismatch(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        mats = DuetFeatureMatrices.from_rows([np.zeros(WORD_DIM)], [], [], 1, 1)
        write_feature_cache(path, [("q", "d", mats)])
        rec = json.loads(path.read_text())
        rec["schema"] = "0000000000000000"
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(SchemaMismatch):
            read_feature_cache(path)

    def test_malformed(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        path.write_text("{oops\n")
        with pytest.raises(FormatError):
            read_feature_cache(path)


class TestColumnMasks:
    def test_all(self):
        w, e = column_masks()
        assert w.all() and e.all()

    def test_first_three_bins(self):
        w, e = column_masks(["qe_de"], n_bins=3)
        assert not w.any()
        kept = [c for c, keep in zip(ENTITY_COLUMNS, e) if keep]
        assert kept == [f"qe_de:{f}:bin{k}" for f in ("title", "body") for k in range(3)]

    def test_top_k(self):
        w, _ = column_masks(["qw_de"], top_k=1)
        assert w.sum() == 12

    def test_unknown_group(self):
        with pytest.raises(ValueError):
            column_masks(["pagerank"])
