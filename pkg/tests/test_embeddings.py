"""Embedding tables, TransE and the joint skip-gram trainer."""

import numpy as np
import pytest

from duetrank.corpus import FormatError
from duetrank.embeddings import (
    EmbeddingTable,
    SkipGramConfig,
    TransEConfig,
    _corrupt,
    cosine,
    entity_replaced_stream,
    l1_distance,
    mean_vector,
    train_joint_skipgram,
    train_transe,
    transe_pair_gradient,
    transe_pair_loss,
)
from duetrank.linker import Annotation

from _gradcheck import TOLERANCE
from _instances import check_transe_gradient, transe_instance

def chain_graph(n):
    ents = [f"e{i}" for i in range(n)]
    return [(ents[i], "next", ents[i + 1]) for i in range(n - 1)]


class TestTable:
    def test_lookup_absent(self):
        t = EmbeddingTable(["a"], np.ones((1, 3)))
        assert t.get("b") is None
        assert "a" in t and len(t) == 1

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        t = EmbeddingTable(["a", "b", "/m/0x"], rng.normal(size=(3, 7)))
        t.save(tmp_path / "v.txt")
        back = EmbeddingTable.load(tmp_path / "v.txt")
        assert back.symbols == t.symbols
        assert np.array_equal(back.vectors, t.vectors)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("3\na 1 2 3\n")
        with pytest.raises(FormatError):
            EmbeddingTable.load(p)

    def test_count_mismatch(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("2 2\na 1 2\n")
        with pytest.raises(FormatError):
            EmbeddingTable.load(p)

    def test_duplicate_symbols(self):
        with pytest.raises(ValueError):
            EmbeddingTable(["a", "a"], np.ones((2, 2)))

    def test_cosine_and_l1(self):
        assert cosine(np.array([1.0, 0]), np.array([0, 2.0])) == 0.0
        assert cosine(np.array([1.0, 1]), np.array([2.0, 2])) == pytest.approx(1.0)
        assert cosine(np.zeros(2), np.ones(2)) == 0.0
        assert l1_distance(np.array([1.0, -1]), np.array([0.0, 1])) == 3.0

    def test_mean_vector(self):
        t = EmbeddingTable(["a", "b"], np.array([[1.0, 0], [0, 1.0]]))
        assert np.allclose(mean_vector(t, ["a", "b", "zzz"]), [0.5, 0.5])
        assert mean_vector(t, ["zzz"]) is None


class TestTransE:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert check_transe_gradient(transe_instance(rng)) <= TOLERANCE

    def test_inactive_hinge_has_zero_gradient(self):
        z = np.zeros(3)
        far = np.full(3, 5.0)
        grads = transe_pair_gradient(z, z, z, far, z)
        assert transe_pair_loss(z, z, z, far, z) == 0.0
        assert all(not g.any() for g in grads.values())

    def test_chain_loss_decreases(self):
        cfg = TransEConfig(dim=20, epochs=200, seed=0)
        trace = train_transe(chain_graph(6), cfg).loss_trace
        assert len(trace) == 200
        assert trace[-1] < trace[0]

    def test_unit_entity_norms(self):
        res = train_transe(chain_graph(5), TransEConfig(dim=8, epochs=5))
        assert np.allclose(np.linalg.norm(res.entities.vectors, axis=1), 1.0)
        assert res.entities.kind == "transe-entity"
        assert res.predicates.symbols == ["next"]

    def test_deterministic(self):
        cfg = TransEConfig(dim=8, epochs=20, seed=3)
        a = train_transe(chain_graph(6), cfg)
        b = train_transe(chain_graph(6), cfg)
        assert np.array_equal(a.entities.vectors, b.entities.vectors)
        assert a.loss_trace == b.loss_trace

    def test_corruption_changes_one_side(self):
        rng = np.random.default_rng(0)
        pos = np.array([[i % 4, 0, (i + 1) % 4] for i in range(500)])
        neg = _corrupt(pos, 4, rng)
        changed = (neg != pos).sum(1)
        assert (changed == 1).all()
        assert (neg[:, 1] == pos[:, 1]).all()
        heads = (neg[:, 0] != pos[:, 0]).mean()
        assert 0.4 < heads < 0.6

    def test_filtered_negatives_avoid_true_triples(self):
        triples = chain_graph(3) + [("e0", "next", "e2")]
        res = train_transe(triples, TransEConfig(dim=4, epochs=3, filter_negatives=True))
        assert len(res.loss_trace) == 3

    def test_entity_vocabulary_override(self):
        res = train_transe(chain_graph(3), TransEConfig(dim=4, epochs=2), entities=["e0", "e1", "e2", "lonely"])
        assert res.entities.get("lonely") is not None

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            TransEConfig(dim=0)
        with pytest.raises(ValueError):
            train_transe([])


class TestSkipGram:
    STREAMS = [
        ["barack", "obama", "presid", "elect"],
        ["michell", "obama", "garden", "white", "hous"],
        ["presid", "obama", "speech"],
    ] * 5

    def test_entity_replacement(self):
        ann = [Annotation("E1", 0, 2, "barack obama", 1.0)]
        assert entity_replaced_stream(["barack", "obama", "spoke"], ann) == ["E1", "spoke"]

    def test_vocabulary_includes_entities(self):
        anns = [[Annotation("BO", 0, 2, "barack obama", 1.0)] if s[0] == "barack" else [] for s in self.STREAMS]
        table = train_joint_skipgram(self.STREAMS, anns, SkipGramConfig(dim=10, epochs=2))
        assert "BO" in table and "obama" in table
        assert table.kind == "joint" and table.dim == 10

    def test_deterministic(self):
        cfg = SkipGramConfig(dim=8, epochs=2, seed=5)
        a = train_joint_skipgram(self.STREAMS, None, cfg)
        b = train_joint_skipgram(self.STREAMS, None, cfg)
        assert a.symbols == b.symbols
        assert np.array_equal(a.vectors, b.vectors)

    def test_min_count(self):
        table = train_joint_skipgram([["a", "a", "b"]] * 2, None, SkipGramConfig(dim=4, min_count=3))
        assert "a" in table and "b" not in table

    def test_learns_cooccurrence(self):
        rng = np.random.default_rng(0)
        streams = []
        for _ in range(300):
            group = ["sun", "moon", "star"] if rng.random() < 0.5 else ["bread", "oven", "flour"]
            streams.append(list(rng.choice(group, size=6)))
        table = train_joint_skipgram(streams, None, SkipGramConfig(dim=16, epochs=3, window=2))
        same = cosine(table.get("sun"), table.get("moon"))
        other = cosine(table.get("sun"), table.get("oven"))
        assert same > other

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            train_joint_skipgram([[]], None, SkipGramConfig(dim=4))
