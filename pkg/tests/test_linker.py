"""Spotting, disambiguation and annotation files."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duetrank.corpus import FormatError
from duetrank.embeddings import EmbeddingTable
from duetrank.kb import Entity, KnowledgeBase, SurfaceForm
from duetrank.linker import (
    Annotation,
    BagOfEntities,
    Linker,
    Span,
    UnlinkableSpan,
    load_annotations,
    load_query_annotations,
    write_annotations,
    write_query_annotations,
)


def _make_kb():
    ents = [
        Entity("BarackObama", "Barack Obama", description="president famili"),
        Entity("MichelleObama", "Michelle Obama"),
        Entity("NYC", "New York City"),
        Entity("York", "York"),
        Entity("A", "a"),
        Entity("B", "b"),
    ]
    forms = [
        SurfaceForm("obama", 100, 90, {"BarackObama": 80, "MichelleObama": 10}),
        SurfaceForm("new york", 50, 40, {"NYC": 40}),
        SurfaceForm("york", 50, 10, {"York": 10}),
        SurfaceForm("tie", 10, 4, {"B": 2, "A": 2}),
        SurfaceForm("rare", 100, 1, {"A": 1}),
        SurfaceForm("never", 5, 0, {}),
    ]
    return KnowledgeBase(ents, [], forms)


@pytest.fixture
def kb():
    return _make_kb()


SHARED_KB = _make_kb()


class TestSpot:
    def test_obama_query(self, kb):
        spans = Linker(kb).spot(["obama", "famili", "tree"], lp_threshold=0.1)
        assert spans == [Span(0, 1, "obama")]

    def test_empty(self, kb):
        assert Linker(kb).spot([]) == []

    def test_longest_match(self, kb):
        assert Linker(kb).spot(["new", "york"]) == [Span(0, 2, "new york")]

    def test_threshold_prunes(self, kb):
        assert Linker(kb).spot(["rare", "obama"], lp_threshold=0.5) == [Span(1, 1, "obama")]

    def test_unlinked_forms_skipped(self, kb):
        assert Linker(kb).spot(["never"]) == []

    def test_max_span(self, kb):
        assert Linker(kb, max_span=1).spot(["new", "york"]) == [Span(1, 1, "york")]

    @settings(max_examples=150, deadline=None)
    @given(
        st.lists(st.sampled_from(["obama", "new", "york", "tie", "rare", "x"]), max_size=15),
        st.floats(0, 1),
        st.floats(0, 1),
    )
    def test_monotone_and_disjoint(self, tokens, t1, t2):
        lo, hi = sorted((t1, t2))
        linker = Linker(SHARED_KB)
        low = linker.spot(tokens, lo)
        high = linker.spot(tokens, hi)
        assert set(high) <= set(low)
        for a, b in zip(low, low[1:]):
            assert a.end <= b.start
        assert all(s.end <= len(tokens) for s in low)


class TestDisambiguate:
    def test_argmax(self, kb):
        assert Linker(kb).disambiguate("obama") == ("BarackObama", pytest.approx(80 / 90))

    def test_single_candidate(self, kb):
        assert Linker(kb).disambiguate("new york") == ("NYC", 1.0)

    def test_tie_smaller_id(self, kb):
        assert Linker(kb).disambiguate("tie") == ("A", 0.5)

    def test_unlinkable(self, kb):
        with pytest.raises(UnlinkableSpan):
            Linker(kb).disambiguate("nothing")

    def test_context_weight_without_vectors(self, kb):
        eid, conf = Linker(kb, context_weight=0.5).disambiguate("new york")
        assert conf == pytest.approx(0.5 * 1.0 + 0.5 * 0.5)

    def test_context_can_flip(self, kb):
        # Barack's description points away from the context; Michelle has no
        # description, so her context score stays neutral at 0.5
        syms = ["presid", "famili", "garden"]
        vecs = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
        kb.entities["BarackObama"].description = "president family"
        kb._bags.clear()
        joint = EmbeddingTable(syms, vecs, "joint")
        linker = Linker(kb, context_weight=1.0, joint=joint)
        assert linker.context_score("BarackObama", ["garden"]) == pytest.approx(0.0)
        assert linker.disambiguate("obama", ["garden"]) == ("MichelleObama", 0.5)

    def test_bad_context_weight(self, kb):
        with pytest.raises(ValueError):
            Linker(kb, context_weight=1.5)


class TestAnnotate:
    def test_query(self, kb):
        bag = Linker(kb).annotate(["obama", "famili", "tree"])
        assert dict(bag.counts) == {"BarackObama": 1}

    def test_frequency(self, kb):
        bag = Linker(kb).annotate(["obama", "said", "obama"])
        assert bag.counts["BarackObama"] == 2
        assert sum(bag.counts.values()) == len(bag.annotations)

    def test_no_forms(self, kb):
        assert len(Linker(kb).annotate(["nothing", "here"])) == 0

    def test_min_confidence(self, kb):
        bag = Linker(kb, min_confidence=0.6).annotate(["tie", "obama"])
        assert list(bag.counts) == ["BarackObama"]

    def test_deterministic(self, kb):
        toks = ["new", "york", "obama", "tie"]
        assert Linker(kb).annotate(toks) == Linker(kb).annotate(toks)

    def test_entity_order_follows_text(self, kb):
        bag = Linker(kb).annotate(["tie", "obama", "tie"])
        assert bag.entity_order() == ["A", "BarackObama"]
        assert bag.first_annotation("BarackObama") == Annotation("BarackObama", 1, 1, "obama", pytest.approx(80 / 90))


class TestFiles:
    def test_doc_round_trip(self, tmp_path):
        ents = {"d1": {"title": BagOfEntities.from_counts({"A": 2}), "body": BagOfEntities.from_counts({"B": 1, "A": 3})}}
        path = tmp_path / "ann.tsv"
        write_annotations(path, ents)
        back = load_annotations(path)
        assert back["d1"]["body"].counts == {"B": 1, "A": 3}

    def test_doc_malformed(self, tmp_path):
        path = tmp_path / "ann.tsv"
        path.write_text("d1\tbody\tA\n")
        with pytest.raises(FormatError):
            load_annotations(path)

    def test_query_round_trip(self, tmp_path, kb):
        bag = Linker(kb).annotate(["obama", "new", "york"])
        path = tmp_path / "q.tsv"
        write_query_annotations(path, {"q1": bag})
        assert load_query_annotations(path)["q1"] == bag
