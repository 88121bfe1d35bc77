"""Reference values for the nine scorers on a five-document toy collection.

Written from the scorer formulas alone, with exact rational arithmetic for
every quantity inside a logarithm, and without importing duetrank. Run it
to regenerate ``tests/data/retrieval_table.json``:

    python3 tests/oracles/retrieval_oracle.py > tests/data/retrieval_table.json
"""

import json
import math
from fractions import Fraction as Fr

K1, B = Fr(6, 5), Fr(3, 4)
MU = Fr(2500)
LAM = Fr(2, 5)
EPS = 1e-10

DOCS = {
    "d1": "cat cat dog bird".split(),
    "d2": "dog dog dog fish".split(),
    "d3": "cat fish fish fish fish bird bird".split(),
    "d4": "zebra".split(),
    "d5": [],
}
QUERIES = {
    "q_cat": {"cat": 1},
    "q_cat_dog": {"cat": 1, "dog": 1},
    "q_dog2_fish": {"dog": 2, "fish": 1},
    "q_unseen": {"cat": 1, "unicorn": 1},
    "q_empty": {},
}

N = len(DOCS)
TOTAL = sum(len(d) for d in DOCS.values())
AVG = Fr(TOTAL, N)


def tf(term, doc):
    return sum(1 for t in doc if t == term)


def df(term):
    return sum(1 for d in DOCS.values() if term in d)


def cf(term):
    return sum(tf(term, d) for d in DOCS.values())


def ln(x):
    # every log argument is floored at epsilon
    return math.log(max(float(x), EPS))


def reference(scorer, query, doc):
    if not query:
        return 0.0
    L = len(doc)
    if scorer == "bool_or":
        return float(any(tf(t, doc) for t in query))
    if scorer == "bool_and":
        return float(all(tf(t, doc) for t in query))
    if scorer == "coord":
        return float(sum(1 for t in query if tf(t, doc)))
    total = 0.0
    for t, q in query.items():
        f, pc = tf(t, doc), Fr(cf(t), TOTAL)
        pml = Fr(f, L) if L else Fr(0)
        if scorer == "bm25":
            # a repeated query term counts once per occurrence
            idf = math.log(float((N - df(t) + Fr(1, 2)) / (df(t) + Fr(1, 2)) + 1))
            part = idf * float(f * (K1 + 1) / (f + K1 * (1 - B + B * L / AVG))) if f else 0.0
        elif scorer == "tfidf":
            part = f * math.log(N / df(t)) if f else 0.0
        elif scorer == "lm":
            part = ln(pml)
        elif scorer == "lm_jm":
            part = ln((1 - LAM) * pml + LAM * pc)
        elif scorer == "lm_dir":
            part = ln((f + MU * pc) / (L + MU))
        elif scorer == "lm_two":
            part = ln((1 - LAM) * (f + MU * pc) / (L + MU) + LAM * pc)
        total += q * part
    return total


SCORERS = ["bm25", "tfidf", "bool_or", "bool_and", "coord", "lm", "lm_jm", "lm_dir", "lm_two"]

if __name__ == "__main__":
    table = {
        "docs": DOCS,
        "queries": QUERIES,
        "expected": {
            s: {q: {d: reference(s, QUERIES[q], DOCS[d]) for d in DOCS} for q in QUERIES} for s in SCORERS
        },
        # single-document example: tf=2, len=10, cf=5, total=1000, mu=2500
        "lm_dir_single": math.log(float((2 + MU * Fr(5, 1000)) / (10 + MU))),
    }
    print(json.dumps(table, indent=1, sort_keys=True))
