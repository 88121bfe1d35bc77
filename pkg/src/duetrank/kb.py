"""Entity store, knowledge-graph triples, and surface-form link statistics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .corpus import BagOfWords, FieldStats, FormatError, Tokenizer, bag_of_words, default_tokenizer

ENTITY_TEXT_FIELDS = ("name", "description")


@dataclass
class Entity:
    entity_id: str
    name: str
    aliases: list[str] = field(default_factory=list)
    description: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValueError(f"entity {self.entity_id!r} has an empty name")


class Triple(NamedTuple):
    head: str
    predicate: str
    tail: str


@dataclass
class SurfaceForm:
    """Link statistics of one processed surface form.

    ``candidates`` maps entity id to the number of times the form was linked
    to that entity; the counts sum to ``link_count``.
    """

    form: str
    occurrence_count: int
    link_count: int
    candidates: dict[str, int]

    def __post_init__(self):
        if self.link_count > self.occurrence_count:
            raise ValueError(f"surface form {self.form!r}: link_count exceeds occurrence_count")
        if sum(self.candidates.values()) != self.link_count:
            raise ValueError(f"surface form {self.form!r}: candidate counts do not sum to link_count")
        if any(c <= 0 for c in self.candidates.values()):
            raise ValueError(f"surface form {self.form!r}: candidate counts must be positive")

    @property
    def lp(self) -> float:
        return self.link_count / self.occurrence_count if self.occurrence_count else 0.0

    def cmns(self, entity_id: str) -> float:
        if not self.link_count:
            return 0.0
        return self.candidates.get(entity_id, 0) / self.link_count

    def ranked_candidates(self) -> list[tuple[str, float]]:
        """Candidates by CMNS descending, entity id ascending on ties."""
        return sorted(
            ((e, c / self.link_count) for e, c in self.candidates.items()),
            key=lambda ec: (-ec[1], ec[0]),
        )


def form_key(form: str | Sequence[str]) -> str:
    """Dictionary key of an already-processed form (string or token sequence)."""
    return form if isinstance(form, str) else " ".join(form)


class KnowledgeBase:
    """Entities, triples and a surface-form dictionary.

    Entity name and description text is tokenized on first use with the
    same pipeline as documents, and collection statistics over those texts
    back the query-word to document-entity features.
    """

    def __init__(
        self,
        entities: Iterable[Entity] = (),
        triples: Iterable[Triple] = (),
        surface_forms: Iterable[SurfaceForm] = (),
        tokenizer: Tokenizer | None = None,
    ):
        self.entities: dict[str, Entity] = {}
        for ent in entities:
            if ent.entity_id in self.entities:
                raise ValueError(f"duplicate entity_id {ent.entity_id!r}")
            self.entities[ent.entity_id] = ent
        self.triples: list[Triple] = []
        for tr in triples:
            for end in (tr.head, tr.tail):
                if end not in self.entities:
                    raise ValueError(f"triple {tuple(tr)} references unknown entity {end!r}")
            self.triples.append(Triple(*tr))
        self.surface_forms: dict[str, SurfaceForm] = {}
        for sf in surface_forms:
            self.add_surface_form(sf)
        self.tokenizer = tokenizer or default_tokenizer()
        self._bags: dict[tuple[str, str], BagOfWords] = {}
        self._text_stats: dict[str, FieldStats] | None = None

    def __contains__(self, entity_id) -> bool:
        return entity_id in self.entities

    def __len__(self):
        return len(self.entities)

    def add_surface_form(self, sf: SurfaceForm) -> None:
        old = self.surface_forms.get(sf.form)
        if old is not None:
            merged = dict(old.candidates)
            for e, c in sf.candidates.items():
                merged[e] = merged.get(e, 0) + c
            sf = SurfaceForm(
                sf.form,
                old.occurrence_count + sf.occurrence_count,
                old.link_count + sf.link_count,
                merged,
            )
        self.surface_forms[sf.form] = sf

    @property
    def max_form_length(self) -> int:
        return max((len(f.split()) for f in self.surface_forms), default=0)

    # -- link statistics ---------------------------------------------------

    def surface_form(self, form) -> SurfaceForm | None:
        return self.surface_forms.get(form_key(form))

    def lp(self, form) -> float:
        sf = self.surface_form(form)
        return sf.lp if sf else 0.0

    def cmns(self, form, entity_id: str) -> float:
        sf = self.surface_form(form)
        return sf.cmns(entity_id) if sf else 0.0

    def candidates(self, form) -> list[tuple[str, float]]:
        sf = self.surface_form(form)
        return sf.ranked_candidates() if sf else []

    def candidate_entropy(self, form) -> float:
        """Shannon entropy (nats) of the form's CMNS distribution; 0 for unknown forms."""
        h = 0.0
        for _, p in self.candidates(form):
            if p > 0:
                h -= p * math.log(p)
        return max(h, 0.0)

    # -- entity text -------------------------------------------------------

    def text_bag(self, entity_id: str, text_field: str) -> BagOfWords:
        """Bag of words of an entity's name or description (empty if unknown)."""
        key = (entity_id, text_field)
        bag = self._bags.get(key)
        if bag is None:
            ent = self.entities.get(entity_id)
            if ent is None:
                bag = bag_of_words(())
            elif text_field == "name":
                bag = bag_of_words(self.tokenizer(ent.name))
            elif text_field == "description":
                bag = bag_of_words(self.tokenizer(ent.description))
            else:
                raise KeyError(text_field)
            self._bags[key] = bag
        return bag

    @property
    def text_stats(self) -> dict[str, FieldStats]:
        if self._text_stats is None:
            self._text_stats = {
                tf: FieldStats.from_bags(self.text_bag(e, tf) for e in self.entities)
                for tf in ENTITY_TEXT_FIELDS
            }
        return self._text_stats

    @property
    def predicates(self) -> list[str]:
        return sorted({t.predicate for t in self.triples})


def load_entities(path) -> list[Entity]:
    entities = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                entities.append(
                    Entity(
                        str(rec["entity_id"]),
                        rec["name"],
                        list(rec.get("aliases") or []),
                        rec.get("description") or "",
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(path, lineno, f"bad entity record: {exc}") from None
    return entities


def load_triples(path) -> list[Triple]:
    triples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or not all(parts):
                raise FormatError(path, lineno, "expected head<TAB>predicate<TAB>tail")
            triples.append(Triple(*parts))
    return triples


def load_surface_forms(path, tokenizer: Tokenizer | None = None) -> list[SurfaceForm]:
    """Read ``form<TAB>occurrences<TAB>links<TAB>entity:count,...`` lines.

    Raw forms are run through the tokenizer; forms that process to nothing
    (e.g. pure stopwords) are skipped.
    """
    tok = tokenizer or default_tokenizer()
    forms = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) not in (3, 4):
                raise FormatError(path, lineno, "expected form<TAB>occurrences<TAB>links<TAB>candidates")
            raw, occ, links = parts[:3]
            cand_field = parts[3] if len(parts) == 4 else ""
            try:
                candidates: dict[str, int] = {}
                for item in filter(None, cand_field.split(",")):
                    eid, count = item.rsplit(":", 1)
                    candidates[eid] = candidates.get(eid, 0) + int(count)
                key = form_key(tok(raw))
                if not key:
                    continue
                forms.append(SurfaceForm(key, int(occ), int(links), candidates))
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
    return forms


def write_surface_forms(path, forms: Iterable[SurfaceForm]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sf in sorted(forms, key=lambda s: s.form):
            cands = ",".join(f"{e}:{c}" for e, c in sorted(sf.candidates.items()))
            f.write(f"{sf.form}\t{sf.occurrence_count}\t{sf.link_count}\t{cands}\n")


def load_kb(
    entities_path,
    triples_path=None,
    surface_forms_path=None,
    tokenizer: Tokenizer | None = None,
) -> KnowledgeBase:
    tok = tokenizer or default_tokenizer()
    entities = load_entities(entities_path)
    triples = load_triples(triples_path) if triples_path else []
    forms = load_surface_forms(surface_forms_path, tok) if surface_forms_path else []
    return KnowledgeBase(entities, triples, forms, tokenizer=tok)


def build_surface_forms(
    mentions: Iterable[tuple[str, str]],
    token_streams: Iterable[Sequence[str]] = (),
    tokenizer: Tokenizer | None = None,
) -> list[SurfaceForm]:
    """Aggregate ``(surface text, entity_id)`` link records into a dictionary.

    Occurrence counts come from exact processed-token matches in
    ``token_streams``; a form seen fewer times than it was linked gets its
    link count as occurrences (lp = 1).
    """
    tok = tokenizer or default_tokenizer()
    links: dict[str, dict[str, int]] = {}
    for text, eid in mentions:
        key = form_key(tok(text))
        if key:
            cands = links.setdefault(key, {})
            cands[eid] = cands.get(eid, 0) + 1
    max_len = max((len(k.split()) for k in links), default=0)
    occurrences = dict.fromkeys(links, 0)
    for stream in token_streams:
        stream = list(stream)
        for i in range(len(stream)):
            for n in range(1, min(max_len, len(stream) - i) + 1):
                key = " ".join(stream[i : i + n])
                if key in occurrences:
                    occurrences[key] += 1
    forms = []
    for key, cands in links.items():
        n_links = sum(cands.values())
        forms.append(SurfaceForm(key, max(occurrences[key], n_links), n_links, cands))
    return forms
