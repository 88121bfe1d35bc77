"""Text processing, document collections, and TREC-style input files."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from nltk.stem.porter import PorterStemmer

FIELDS = ("title", "body")

_APOSTROPHES = re.compile(r"['’]")
_NON_ALNUM = re.compile(r"[^a-z0-9]+")

BagOfWords = Counter  # token -> frequency


class FormatError(ValueError):
    """A malformed line in one of the input files."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


def _normalize(text: str) -> list[str]:
    text = _APOSTROPHES.sub("", text.lower())
    return [tok for tok in _NON_ALNUM.split(text) if tok]


def load_stopwords(path=None) -> frozenset[str]:
    """Read a whitespace-separated stopword list; the bundled INQUERY list by default."""
    if path is None:
        text = resources.files("duetrank").joinpath("data/inquery_stopwords.txt").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = set()
    for word in text.split():
        words.update(_normalize(word))
    return frozenset(words)


_porter = PorterStemmer()


@lru_cache(maxsize=200_000)
def porter_stem(token: str) -> str:
    # Porter is not idempotent on a handful of words; iterate to a fixed point
    # so tokenize() is idempotent on its own output.
    prev, cur = None, token
    while cur != prev:
        prev, cur = cur, _porter.stem(cur)
    return cur


@dataclass(frozen=True)
class Tokenizer:
    """Lowercase, strip punctuation, drop stopwords, stem.

    ``stemmer`` is ``"porter"`` or ``"none"``.
    """

    stemmer: str = "porter"
    stopwords: frozenset[str] = field(default_factory=load_stopwords)

    def __post_init__(self):
        if self.stemmer not in ("porter", "none"):
            raise ValueError(f"unknown stemmer {self.stemmer!r}")

    def __call__(self, text: str) -> list[str]:
        return self.tokenize(text)

    def tokenize(self, text: str) -> list[str]:
        out = []
        for tok in _normalize(text):
            if tok in self.stopwords:
                continue
            if self.stemmer == "porter":
                tok = porter_stem(tok)
                if tok in self.stopwords:
                    continue
            out.append(tok)
        return out


def tokenize(text: str, tokenizer: Tokenizer | None = None) -> list[str]:
    return (tokenizer or default_tokenizer())(text)


@lru_cache(maxsize=1)
def default_tokenizer() -> Tokenizer:
    return Tokenizer()


def bag_of_words(tokens: Iterable[str]) -> BagOfWords:
    return Counter(tokens)


@dataclass
class Document:
    doc_id: str
    title_tokens: list[str]
    body_tokens: list[str]
    title_bag: BagOfWords = field(init=False, repr=False, compare=False)
    body_bag: BagOfWords = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.title_bag = bag_of_words(self.title_tokens)
        self.body_bag = bag_of_words(self.body_tokens)

    def bag(self, field_name: str) -> BagOfWords:
        if field_name == "title":
            return self.title_bag
        if field_name == "body":
            return self.body_bag
        raise KeyError(field_name)

    def tokens(self, field_name: str) -> list[str]:
        return self.title_tokens if field_name == "title" else self.body_tokens


@dataclass
class Query:
    query_id: str
    raw_text: str
    tokens: list[str]


@dataclass
class FieldStats:
    """Collection statistics of one text field."""

    doc_count: int = 0
    total_tokens: int = 0
    df: dict[str, int] = field(default_factory=dict)
    cf: dict[str, int] = field(default_factory=dict)

    @property
    def avg_doc_len(self) -> float:
        return self.total_tokens / self.doc_count if self.doc_count else 0.0

    def add(self, bag: Mapping[str, int]) -> None:
        self.doc_count += 1
        for tok, n in bag.items():
            self.df[tok] = self.df.get(tok, 0) + 1
            self.cf[tok] = self.cf.get(tok, 0) + n
            self.total_tokens += n

    @classmethod
    def from_bags(cls, bags: Iterable[Mapping[str, int]]) -> "FieldStats":
        stats = cls()
        for bag in bags:
            stats.add(bag)
        return stats


@dataclass
class CollectionStats:
    doc_count: int
    fields: dict[str, FieldStats]

    def __getitem__(self, field_name: str) -> FieldStats:
        return self.fields[field_name]


@dataclass
class Corpus:
    documents: dict[str, Document]
    stats: CollectionStats

    def __len__(self):
        return len(self.documents)

    def __getitem__(self, doc_id: str) -> Document:
        return self.documents[doc_id]

    def __contains__(self, doc_id) -> bool:
        return doc_id in self.documents

    @classmethod
    def from_documents(cls, docs: Iterable[Document]) -> "Corpus":
        documents: dict[str, Document] = {}
        fields = {name: FieldStats() for name in FIELDS}
        for doc in docs:
            if doc.doc_id in documents:
                raise ValueError(f"duplicate doc_id {doc.doc_id!r}")
            documents[doc.doc_id] = doc
            for name in FIELDS:
                fields[name].add(doc.bag(name))
        return cls(documents, CollectionStats(len(documents), fields))


def _read_corpus_records(path: Path, fmt: str):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            if fmt == "jsonl":
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
                if not isinstance(rec, dict) or "doc_id" not in rec:
                    raise FormatError(path, lineno, "record needs a doc_id")
                yield lineno, str(rec["doc_id"]), rec.get("title") or "", rec.get("body") or ""
            else:
                parts = line.rstrip("\n").split("\t")
                if len(parts) not in (2, 3):
                    raise FormatError(path, lineno, "expected doc_id<TAB>title<TAB>body")
                parts += [""] * (3 - len(parts))
                yield lineno, parts[0], parts[1], parts[2]


def load_corpus(path, fmt: str | None = None, tokenizer: Tokenizer | None = None) -> Corpus:
    """Load a JSONL (``doc_id``, ``title``, ``body``) or TSV corpus."""
    path = Path(path)
    if fmt is None:
        fmt = "tsv" if path.suffix in (".tsv", ".txt") else "jsonl"
    if fmt not in ("jsonl", "tsv"):
        raise ValueError(f"unknown corpus format {fmt!r}")
    tok = tokenizer or default_tokenizer()
    docs = []
    seen = set()
    for lineno, doc_id, title, body in _read_corpus_records(path, fmt):
        if doc_id in seen:
            raise FormatError(path, lineno, f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        docs.append(Document(doc_id, tok(title), tok(body)))
    return Corpus.from_documents(docs)


def load_queries(path, tokenizer: Tokenizer | None = None) -> dict[str, Query]:
    """Read ``query_id<TAB>text`` lines."""
    tok = tokenizer or default_tokenizer()
    queries = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t", 1)
            if len(parts) != 2:
                raise FormatError(path, lineno, "expected query_id<TAB>text")
            qid, text = parts
            if qid in queries:
                raise FormatError(path, lineno, f"duplicate query_id {qid!r}")
            queries[qid] = Query(qid, text, tok(text))
    return queries


Qrels = dict  # query_id -> {doc_id: grade}


def load_qrels(path) -> dict[str, dict[str, int]]:
    """Read TREC qrels (``qid 0 docid grade``)."""
    qrels: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FormatError(path, lineno, "expected 'qid iter docid grade'")
            qid, _, doc_id, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise FormatError(path, lineno, f"grade {grade!r} is not an integer") from None
            judged = qrels.setdefault(qid, {})
            if doc_id in judged:
                raise FormatError(path, lineno, f"second judgment for ({qid}, {doc_id})")
            judged[doc_id] = g
    return qrels


class RunEntry(NamedTuple):
    doc_id: str
    rank: int
    score: float


def load_run(path, depth: int | None = 100) -> dict[str, list[RunEntry]]:
    """Read a TREC run file, keeping file order and at most ``depth`` docs per query."""
    run: dict[str, list[RunEntry]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise FormatError(path, lineno, "expected 'qid Q0 docid rank score tag'")
            qid, _, doc_id, rank, score, _ = parts
            try:
                entry = RunEntry(doc_id, int(rank), float(score))
            except ValueError:
                raise FormatError(path, lineno, "rank must be int and score a number") from None
            ranked = run.setdefault(qid, [])
            if depth is None or len(ranked) < depth:
                ranked.append(entry)
    return run


def write_run(path, run: Mapping[str, Sequence[tuple]], tag: str = "duetrank") -> None:
    """Write an ordered run as TREC lines.

    Entries are ``(doc_id, score)`` pairs, numbered from 1, or :class:`RunEntry`
    tuples whose rank is written as given. Scores use ``repr`` so reading the
    file back yields the same floats.
    """
    with open(path, "w", encoding="utf-8") as f:
        for qid, ranked in run.items():
            for pos, entry in enumerate(ranked, 1):
                if len(entry) == 3:
                    doc_id, rank, score = entry
                else:
                    (doc_id, score), rank = entry, pos
                f.write(f"{qid} Q0 {doc_id} {rank} {float(score)!r} {tag}\n")
