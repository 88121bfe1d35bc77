"""Dictionary-based entity linking: spotting by link probability, disambiguation by commonness."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import FormatError
from .embeddings import EmbeddingTable, cosine, mean_vector
from .kb import KnowledgeBase, form_key


class UnlinkableSpan(ValueError):
    pass


@dataclass(frozen=True)
class Span:
    start: int
    length: int
    form: str

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class Annotation:
    entity_id: str
    start: int
    length: int
    form: str
    confidence: float


@dataclass
class BagOfEntities:
    counts: Counter = field(default_factory=Counter)
    annotations: list[Annotation] = field(default_factory=list)

    @classmethod
    def from_annotations(cls, annotations: Iterable[Annotation]) -> "BagOfEntities":
        annotations = list(annotations)
        return cls(Counter(a.entity_id for a in annotations), annotations)

    @classmethod
    def from_counts(cls, counts: Mapping[str, int]) -> "BagOfEntities":
        return cls(Counter({e: n for e, n in counts.items() if n > 0}), [])

    def entity_order(self) -> list[str]:
        """Distinct entities in order of first annotation (or insertion)."""
        if self.annotations:
            return list(dict.fromkeys(a.entity_id for a in self.annotations))
        return list(self.counts)

    def first_annotation(self, entity_id: str) -> Annotation | None:
        for a in self.annotations:
            if a.entity_id == entity_id:
                return a
        return None

    def __len__(self):
        return len(self.counts)


@dataclass
class Linker:
    kb: KnowledgeBase
    lp_threshold: float = 0.0
    min_confidence: float = 0.0
    context_weight: float = 0.0
    max_span: int = 5
    joint: EmbeddingTable | None = None

    def __post_init__(self):
        if not 0.0 <= self.context_weight <= 1.0:
            raise ValueError("context_weight must lie in [0, 1]")
        if self.max_span < 1:
            raise ValueError("max_span must be >= 1")

    def spot(self, tokens: Sequence[str], lp_threshold: float | None = None) -> list[Span]:
        """Greedy left-to-right longest match over linkable forms, then lp filter.

        The lp threshold prunes matched spans rather than steering the match,
        so a higher threshold can only remove spans.
        """
        threshold = self.lp_threshold if lp_threshold is None else lp_threshold
        forms = self.kb.surface_forms
        spans = []
        i, n = 0, len(tokens)
        while i < n:
            for length in range(min(self.max_span, n - i), 0, -1):
                key = form_key(tokens[i : i + length])
                sf = forms.get(key)
                if sf is not None and sf.link_count > 0:
                    if sf.lp >= threshold:
                        spans.append(Span(i, length, key))
                    i += length
                    break
            else:
                i += 1
        return spans

    def context_score(self, entity_id: str, context_tokens: Sequence[str]) -> float:
        """Cosine of mean description and mean context embeddings, mapped to [0, 1]."""
        if self.joint is None:
            return 0.5
        desc = self.kb.text_bag(entity_id, "description")
        a = mean_vector(self.joint, list(desc.elements()))
        b = mean_vector(self.joint, context_tokens)
        if a is None or b is None:
            return 0.5
        return (1.0 + cosine(a, b)) / 2.0

    def disambiguate(self, span: Span | str, context_tokens: Sequence[str] = ()) -> tuple[str, float]:
        form = span.form if isinstance(span, Span) else form_key(span)
        cands = self.kb.candidates(form)
        if not cands:
            raise UnlinkableSpan(f"unlinkable span {form!r}")
        lam = self.context_weight
        best_id, best_score = None, -np.inf
        for eid, cmns in cands:
            score = (1.0 - lam) * cmns
            if lam:
                score += lam * self.context_score(eid, context_tokens)
            # candidates arrive in entity-id order among CMNS ties, and a strict
            # comparison keeps the smaller id on equal scores
            if score > best_score or (score == best_score and eid < best_id):
                best_id, best_score = eid, score
        return best_id, float(best_score)

    def annotate(
        self,
        tokens: Sequence[str],
        lp_threshold: float | None = None,
        min_confidence: float | None = None,
    ) -> BagOfEntities:
        min_conf = self.min_confidence if min_confidence is None else min_confidence
        annotations = []
        for span in self.spot(tokens, lp_threshold):
            eid, conf = self.disambiguate(span, tokens)
            if conf >= min_conf:
                annotations.append(Annotation(eid, span.start, span.length, span.form, conf))
        return BagOfEntities.from_annotations(annotations)


DocEntities = dict  # doc_id -> {field: BagOfEntities}


def load_annotations(path) -> dict[str, dict[str, BagOfEntities]]:
    """Read precomputed ``doc_id<TAB>field<TAB>entity_id<TAB>tf`` annotations."""
    counts: dict[str, dict[str, Counter]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise FormatError(path, lineno, "expected doc_id<TAB>field<TAB>entity_id<TAB>tf")
            doc_id, fld, eid, tf = parts
            try:
                n = int(tf)
            except ValueError:
                raise FormatError(path, lineno, f"tf {tf!r} is not an integer") from None
            if n < 0:
                raise FormatError(path, lineno, "negative tf")
            counts.setdefault(doc_id, {}).setdefault(fld, Counter())[eid] += n
    return {
        doc_id: {fld: BagOfEntities.from_counts(c) for fld, c in fields.items()}
        for doc_id, fields in counts.items()
    }


def write_annotations(path, doc_entities: Mapping[str, Mapping[str, BagOfEntities]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc_id, fields in doc_entities.items():
            for fld, bag in fields.items():
                for eid in bag.entity_order():
                    f.write(f"{doc_id}\t{fld}\t{eid}\t{bag.counts[eid]}\n")


def write_query_annotations(path, query_entities: Mapping[str, BagOfEntities]) -> None:
    """One line per annotation: ``query_id, entity_id, start, length, form, confidence``."""
    with open(path, "w", encoding="utf-8") as f:
        for qid, bag in query_entities.items():
            for a in bag.annotations:
                f.write(f"{qid}\t{a.entity_id}\t{a.start}\t{a.length}\t{a.form}\t{a.confidence!r}\n")


def load_query_annotations(path) -> dict[str, BagOfEntities]:
    anns: dict[str, list[Annotation]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 6:
                raise FormatError(path, lineno, "expected query_id, entity_id, start, length, form, confidence")
            qid, eid, start, length, form, conf = parts
            try:
                a = Annotation(eid, int(start), int(length), form, float(conf))
            except ValueError:
                raise FormatError(path, lineno, "start/length must be integers and confidence a number") from None
            anns.setdefault(qid, []).append(a)
    return {qid: BagOfEntities.from_annotations(a) for qid, a in anns.items()}
