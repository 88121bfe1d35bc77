"""Command-line pipeline: ingest, link, embed, extract, train, rank, evaluate.

Every subcommand reads a shared INI config (``--config``) whose sections
supply defaults; explicit flags win. Options are looked up in the section
named after the subcommand first, then in the module sections listed in
``_SECTIONS``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    FIELDS,
    FormatError,
    Tokenizer,
    load_corpus,
    load_qrels,
    load_queries,
    load_run,
    load_stopwords,
    write_run,
)
from .embeddings import EmbeddingTable, SkipGramConfig, TransEConfig, train_joint_skipgram, train_transe
from .evaluation import cross_validate
from .features import (
    FEATURE_GROUPS,
    SCHEMA_HASH,
    EsrBinConfig,
    FeatureExtractor,
    SchemaMismatch,
    column_masks,
    read_feature_cache,
    write_feature_cache,
)
from .kb import build_surface_forms, load_kb, load_triples, write_surface_forms
from .linker import (
    BagOfEntities,
    Linker,
    UnlinkableSpan,
    load_annotations,
    load_query_annotations,
    write_annotations,
    write_query_annotations,
)
from .metrics import evaluate as evaluate_run
from .metrics import parse_metric, permutation_test, win_tie_loss
from .ranker import RankerModel, TrainConfig, make_query_data, rank, train
from .retrieval import RetrievalParams

log = logging.getLogger("duetrank")

# config sections consulted per subcommand, after the subcommand's own section
_SECTIONS = {
    "ingest": ("corpus",),
    "build-dict": ("corpus", "kb"),
    "link": ("corpus", "kb", "linker"),
    "train-embeddings": ("corpus", "kb", "linker", "embeddings"),
    "extract-features": ("corpus", "kb", "retrieval", "features"),
    "train": ("ranker",),
    "rank": ("ranker",),
    "evaluate": ("eval",),
    "compare": ("eval",),
    "ablate": ("ranker", "eval"),
}


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return p


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _tokenizer(args) -> Tokenizer:
    stop = load_stopwords(args.stopwords) if args.stopwords else load_stopwords()
    return Tokenizer(args.stemmer, stop)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


# -- subcommands --------------------------------------------------------------


def cmd_ingest(args) -> int:
    tok = _tokenizer(args)
    corpus = load_corpus(args.corpus, args.format, tok)
    summary = {
        "schema": SCHEMA_HASH,
        "doc_count": corpus.stats.doc_count,
        "fields": {
            f: {
                "total_tokens": corpus.stats[f].total_tokens,
                "avg_doc_len": corpus.stats[f].avg_doc_len,
                "vocabulary": len(corpus.stats[f].df),
            }
            for f in FIELDS
        },
    }
    if args.queries:
        queries = load_queries(args.queries, tok)
        empty = sorted(q for q, query in queries.items() if not query.tokens)
        summary["queries"] = {"count": len(queries), "empty_after_processing": empty}
    if args.qrels:
        qrels = load_qrels(args.qrels)
        summary["qrels"] = {"queries": len(qrels), "judgments": sum(len(j) for j in qrels.values())}
    if args.run:
        run = load_run(args.run, args.depth)
        summary["run"] = {"queries": len(run), "candidates": sum(len(r) for r in run.values())}
    if args.out:
        _write_json(args.out, summary)
    else:
        json.dump(summary, sys.stdout, indent=1, sort_keys=True)
        sys.stdout.write("\n")
    return 0


def _read_mentions(path):
    mentions = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise FormatError(path, lineno, "expected surface_text<TAB>entity_id")
            mentions.append((parts[0], parts[1]))
    return mentions


def cmd_build_dict(args) -> int:
    tok = _tokenizer(args)
    kb = load_kb(args.entities, tokenizer=tok)
    mentions = _read_mentions(args.mentions)
    unknown = sorted({e for _, e in mentions if e not in kb.entities})
    if unknown:
        raise KeyError(f"mentions reference unknown entities {unknown[:5]}")
    streams = []
    if args.corpus:
        corpus = load_corpus(args.corpus, args.format, tok)
        streams = [doc.tokens(f) for doc in corpus.documents.values() for f in FIELDS]
    forms = build_surface_forms(mentions, streams, tok)
    write_surface_forms(args.out, forms)
    log.info("wrote %d surface forms to %s", len(forms), args.out)
    return 0


def _load_kb(args, tok):
    return load_kb(args.entities, getattr(args, "triples", None), args.surface_forms, tok)


def _annotate(linker: Linker, tokens):
    return linker.annotate(tokens)


def cmd_link(args) -> int:
    tok = _tokenizer(args)
    kb = _load_kb(args, tok)
    joint = EmbeddingTable.load(args.joint, "joint") if args.joint else None
    linker = Linker(kb, args.lp_threshold, args.min_confidence, args.context_weight, joint=joint)
    corpus = load_corpus(args.corpus, args.format, tok)
    doc_entities = {
        doc_id: {f: _annotate(linker, doc.tokens(f)) for f in FIELDS} for doc_id, doc in corpus.documents.items()
    }
    write_annotations(args.doc_out, doc_entities)
    if args.queries:
        if not args.query_out:
            raise ValueError("--queries needs --query-out")
        queries = load_queries(args.queries, tok)
        write_query_annotations(args.query_out, {q: _annotate(linker, query.tokens) for q, query in queries.items()})
    return 0


def cmd_train_embeddings(args) -> int:
    if args.mode == "transe":
        if not args.triples:
            raise ValueError("transe mode needs --triples")
        triples = load_triples(args.triples)
        entities = None
        if args.entities:
            entities = sorted(load_kb(args.entities, args.triples).entities)
        cfg = TransEConfig(
            dim=args.dim or 50,
            learning_rate=args.lr or 0.01,
            epochs=args.epochs or 1000,
            batch_size=args.batch_size,
            filter_negatives=args.filter_negatives,
            seed=args.seed,
        )
        result = train_transe(triples, cfg, entities)
        result.entities.save(args.out)
        if args.predicates_out:
            result.predicates.save(args.predicates_out)
        log.info("transe loss %.4f -> %.4f", result.loss_trace[0], result.loss_trace[-1])
        return 0
    if not (args.corpus and args.entities and args.surface_forms):
        raise ValueError("skipgram mode needs --corpus, --entities and --surface-forms")
    tok = _tokenizer(args)
    kb = _load_kb(args, tok)
    linker = Linker(kb, args.lp_threshold, args.min_confidence)
    corpus = load_corpus(args.corpus, args.format, tok)
    streams, anns = [], []
    for doc in corpus.documents.values():
        for f in FIELDS:
            tokens = doc.tokens(f)
            streams.append(tokens)
            anns.append(linker.annotate(tokens).annotations)
    cfg = SkipGramConfig(
        dim=args.dim or 300,
        window=args.window,
        negative=args.negative,
        epochs=args.epochs or 5,
        learning_rate=args.lr or 0.025,
        seed=args.seed,
    )
    train_joint_skipgram(streams, anns, cfg).save(args.out)
    return 0


def cmd_extract_features(args) -> int:
    tok = _tokenizer(args)
    corpus = load_corpus(args.corpus, args.format, tok)
    queries = load_queries(args.queries, tok)
    kb = _load_kb(args, tok)
    doc_entities = load_annotations(args.doc_annotations) if args.doc_annotations else {}
    query_entities = load_query_annotations(args.query_annotations) if args.query_annotations else {}
    transe = EmbeddingTable.load(args.transe, "transe-entity") if args.transe else None
    joint = EmbeddingTable.load(args.joint, "joint") if args.joint else None
    params = RetrievalParams(k1=args.k1, b=args.b, mu=args.mu)
    extractor = FeatureExtractor(
        corpus.stats,
        kb,
        doc_entities,
        transe,
        joint,
        params,
        EsrBinConfig(),
        args.max_words,
        args.max_entities,
    )
    run = load_run(args.run, args.depth)
    jobs = []
    for qid in sorted(run):
        if qid not in queries:
            raise KeyError(f"run query {qid!r} is not in the query file")
        query = queries[qid]
        if not query.tokens:
            log.warning("skipping query %s: no words after processing", qid)
            continue
        for entry in run[qid]:
            if entry.doc_id not in corpus:
                raise KeyError(f"run document {entry.doc_id!r} is not in the corpus")
            jobs.append((qid, entry.doc_id))

    def build(job):
        qid, doc_id = job
        return qid, doc_id, extractor.build_matrices(
            queries[qid].tokens, query_entities.get(qid, BagOfEntities()), corpus[doc_id]
        )

    # pool.map keeps job order, so the cache is identical for any thread count
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        records = list(pool.map(build, jobs))
    n = write_feature_cache(args.out, records)
    log.info("wrote %d feature records to %s", n, args.out)
    return 0


def _train_config(args, flat: bool, word_cols=None, entity_cols=None) -> TrainConfig:
    return TrainConfig(
        l2_grid=args.l2_grid,
        max_epochs=args.max_epochs,
        patience=args.patience,
        min_epochs=args.min_epochs,
        learning_rate=args.lr,
        seed=args.seed,
        flat_attention=flat,
        unjudged_as_negative=args.unjudged_as_negative,
        word_columns=word_cols,
        entity_columns=entity_cols,
    )


def _masks(args):
    if tuple(args.groups) == ("all",) and args.top_k is None and args.bins is None:
        return None, None
    w, e = column_masks(args.groups, args.top_k, args.bins)
    return w.astype(np.float64), e.astype(np.float64)


def _query_data(args):
    features = read_feature_cache(args.features)
    qrels = load_qrels(args.qrels)
    candidates = None
    if args.run:
        run = load_run(args.run, args.depth)
        candidates = {q: [e.doc_id for e in run[q]] for q in run}
    return make_query_data(features, qrels, candidates), qrels


def _cross_validate(args, data, qrels, flat, masks):
    cfg = _train_config(args, flat, *masks)
    result = cross_validate(data, cfg, args.folds, args.seed, qrels)
    if args.run_out:
        write_run(args.run_out, result.run, args.tag)
    return result


def cmd_train(args) -> int:
    data, qrels = _query_data(args)
    masks = _masks(args)
    if args.folds:
        result = _cross_validate(args, data, qrels, args.flat_attention, masks)
        if args.out:
            for i, model in enumerate(result.models):
                model.save(f"{args.out}.fold{i}")
        print(f"ndcg@20\t{result.ndcg.mean:.6f}\nerr@20\t{result.err.mean:.6f}")
        return 0
    if not args.out:
        raise ValueError("--out is required unless --folds is given")
    model, train_log = train(list(data.values()), (), _train_config(args, args.flat_attention, *masks))
    model.save(args.out)
    log.info("selected l2=%g", train_log.selected_l2)
    return 0


def cmd_rank(args) -> int:
    model = RankerModel.load(args.model)
    features = read_feature_cache(args.features) if args.features else {}
    run = load_run(args.run_in, args.depth)
    out = {}
    for qid in sorted(run):
        doc_ids = [e.doc_id for e in run[qid]]
        out[qid] = rank(model, features.get(qid, {}), doc_ids)
    write_run(args.run_out, out, args.tag)
    return 0


def _metrics(text):
    names = [m.strip() for m in text.split(",") if m.strip()]
    for m in names:
        parse_metric(m)
    return names


def _run_ids(path, depth):
    return {q: [e.doc_id for e in entries] for q, entries in load_run(path, depth).items()}


def cmd_evaluate(args) -> int:
    run = _run_ids(args.run, args.depth)
    qrels = load_qrels(args.qrels)
    lines = []
    for metric in _metrics(args.metric):
        report = evaluate_run(run, qrels, metric, args.max_grade)
        for qid, value in report.per_query.items():
            lines.append(f"{report.metric}\t{qid}\t{value:.6f}")
        lines.append(f"{report.metric}\tall\t{report.mean:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_compare(args) -> int:
    a = _run_ids(args.run_a, args.depth)
    b = _run_ids(args.run_b, args.depth)
    qrels = load_qrels(args.qrels)
    print("metric\tmean_a\tmean_b\twins\tties\tlosses\tp_value")
    for metric in _metrics(args.metric):
        ra = evaluate_run(a, qrels, metric, args.max_grade)
        rb = evaluate_run(b, qrels, metric, args.max_grade)
        w, t, l = win_tie_loss(ra.per_query, rb.per_query, args.epsilon)
        p = permutation_test(ra.per_query, rb.per_query, args.iterations, args.seed)
        print(f"{ra.metric}\t{ra.mean:.6f}\t{rb.mean:.6f}\t{w}\t{t}\t{l}\t{p:.6g}")
    return 0


def cmd_ablate(args) -> int:
    data, qrels = _query_data(args)
    masks = column_masks(args.groups, args.top_k, args.bins)
    result = _cross_validate(
        args, data, qrels, args.attention == "flat", tuple(m.astype(np.float64) for m in masks)
    )
    print(
        f"groups={','.join(args.groups)}\ttop_k={args.top_k}\tbins={args.bins}\tattention={args.attention}"
        f"\tword_columns={int(masks[0].sum())}\tentity_columns={int(masks[1].sum())}"
        f"\tndcg@20={result.ndcg.mean:.6f}\terr@20={result.err.mean:.6f}"
    )
    return 0


# -- parser -------------------------------------------------------------------


def _add_text_options(p):
    p.add_argument("--format", choices=("jsonl", "tsv"), help="corpus format (default: by file suffix)")
    p.add_argument("--stemmer", choices=("porter", "none"), default="porter")
    p.add_argument("--stopwords", type=_existing, help="stopword file replacing the bundled list")


def _add_kb_options(p, surface_required=True):
    p.add_argument("--entities", type=_existing, required=surface_required, help="entity JSONL")
    p.add_argument("--triples", type=_existing, help="triple TSV")
    p.add_argument("--surface-forms", type=_existing, required=surface_required, help="surface-form TSV")


def _add_linker_options(p):
    p.add_argument("--lp-threshold", type=float, default=0.0)
    p.add_argument("--min-confidence", type=float, default=0.0)
    p.add_argument("--context-weight", type=float, default=0.0)


def _add_training_options(p, flat_flag=True):
    p.add_argument("--features", type=_existing, required=True, help="feature cache JSONL")
    p.add_argument("--qrels", type=_existing, required=True)
    p.add_argument("--run", type=_existing, help="candidate run (default: every cached document)")
    p.add_argument("--depth", type=int, default=100)
    p.add_argument("--l2-grid", type=_float_list, default=(0.0, 0.001, 0.01, 0.1))
    p.add_argument("--max-epochs", type=int, default=300)
    p.add_argument("--min-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--unjudged-as-negative", action="store_true")
    p.add_argument("--groups", nargs="+", choices=("all",) + FEATURE_GROUPS, default=["all"])
    p.add_argument("--top-k", type=int, choices=range(1, 6), help="keep the first k document-entity slots")
    p.add_argument("--bins", type=int, choices=range(1, 7), help="keep the first n histogram bins")
    p.add_argument("--run-out", help="write the cross-validated test run here")
    p.add_argument("--tag", default="duetrank")
    if flat_flag:
        p.add_argument("--flat-attention", action="store_true", help="fix every attention weight to 1")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--config", type=_existing, help="INI file with per-module sections")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="duetrank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse inputs and report collection statistics")
    p.add_argument("--corpus", type=_existing, required=True)
    p.add_argument("--queries", type=_existing)
    p.add_argument("--qrels", type=_existing)
    p.add_argument("--run", type=_existing)
    p.add_argument("--depth", type=int, default=100)
    p.add_argument("--out", help="summary JSON (default: stdout)")
    _add_text_options(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-dict", parents=[common], help="surface-form dictionary from link records")
    p.add_argument("--entities", type=_existing, required=True)
    p.add_argument("--mentions", type=_existing, required=True, help="TSV surface_text<TAB>entity_id")
    p.add_argument("--corpus", type=_existing, help="text for occurrence counts")
    p.add_argument("--out", required=True)
    _add_text_options(p)
    p.set_defaults(func=cmd_build_dict)

    p = sub.add_parser("link", parents=[common], help="annotate documents and queries with entities")
    _add_kb_options(p)
    _add_linker_options(p)
    p.add_argument("--joint", type=_existing, help="joint word+entity vectors for the context score")
    p.add_argument("--corpus", type=_existing, required=True)
    p.add_argument("--queries", type=_existing)
    p.add_argument("--doc-out", required=True)
    p.add_argument("--query-out")
    _add_text_options(p)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("train-embeddings", parents=[common], help="TransE or joint skip-gram vectors")
    p.add_argument("--mode", choices=("transe", "skipgram"), required=True)
    _add_kb_options(p, surface_required=False)
    _add_linker_options(p)
    p.add_argument("--corpus", type=_existing)
    p.add_argument("--dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--filter-negatives", action="store_true")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negative", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--predicates-out")
    _add_text_options(p)
    p.set_defaults(func=cmd_train_embeddings)

    p = sub.add_parser("extract-features", parents=[common], help="build the duet feature cache")
    _add_kb_options(p)
    p.add_argument("--corpus", type=_existing, required=True)
    p.add_argument("--queries", type=_existing, required=True)
    p.add_argument("--run", type=_existing, required=True, help="candidate documents per query")
    p.add_argument("--depth", type=int, default=100)
    p.add_argument("--doc-annotations", type=_existing)
    p.add_argument("--query-annotations", type=_existing)
    p.add_argument("--transe", type=_existing, help="TransE entity vectors")
    p.add_argument("--joint", type=_existing, help="joint word+entity vectors")
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--mu", type=float, default=2500.0)
    p.add_argument("--max-words", type=int, default=10)
    p.add_argument("--max-entities", type=int, default=5)
    p.add_argument("--out", required=True)
    _add_text_options(p)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train", parents=[common], help="train the ranker, optionally cross-validated")
    _add_training_options(p)
    p.add_argument("--folds", type=int, default=0, help="k-fold cross-validation (0: train on everything)")
    p.add_argument("--out", help="model JSON (with --folds, one file per fold with a .foldN suffix)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", parents=[common], help="re-rank a candidate run with a trained model")
    p.add_argument("--model", type=_existing, required=True)
    p.add_argument("--features", type=_existing, help="feature cache for the candidates")
    p.add_argument("--run-in", type=_existing, required=True)
    p.add_argument("--run-out", required=True)
    p.add_argument("--depth", type=int, default=100)
    p.add_argument("--tag", default="duetrank")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("evaluate", parents=[common], help="per-query and mean metrics of a run")
    p.add_argument("--run", type=_existing, required=True)
    p.add_argument("--qrels", type=_existing, required=True)
    p.add_argument("--metric", default="ndcg@20,err@20")
    p.add_argument("--max-grade", type=int, default=4)
    p.add_argument("--depth", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="means, win/tie/loss and significance of two runs")
    p.add_argument("--run-a", type=_existing, required=True)
    p.add_argument("--run-b", type=_existing, required=True)
    p.add_argument("--qrels", type=_existing, required=True)
    p.add_argument("--metric", default="ndcg@20,err@20")
    p.add_argument("--max-grade", type=int, default=4)
    p.add_argument("--depth", type=int)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--iterations", type=int, default=100_000)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", parents=[common], help="cross-validated ranker on a feature subset")
    _add_training_options(p, flat_flag=False)
    p.add_argument("--attention", choices=("flat", "learned"), default="flat")
    p.add_argument("--folds", type=int, default=10)
    p.set_defaults(func=cmd_ablate)
    return parser


def _config_defaults(parser, subparser, command, path) -> None:
    cp = configparser.ConfigParser()
    with open(path, encoding="utf-8") as f:
        cp.read_file(f)
    dests = {a.dest: a for a in subparser._actions}
    values = {}
    for section in reversed((command,) + _SECTIONS.get(command, ()) + ("global",)):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section, raw=True):
            dest = key.replace("-", "_")
            if dest in dests:
                values[dest] = raw
    defaults = {}
    for dest, raw in values.items():
        action = dests[dest]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[dest] = cp.BOOLEAN_STATES.get(raw.strip().lower())
            if defaults[dest] is None:
                raise ValueError(f"config option {dest!r}: expected a boolean, got {raw!r}")
        elif action.nargs in ("+", "*"):
            defaults[dest] = raw.split()
        else:
            defaults[dest] = raw  # argparse applies the type to string defaults
        # a config value satisfies a required option
        action.required = False
    subparser.set_defaults(**defaults)


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    # config defaults must be in place before required options are checked
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in rest if a in choices), None)
    # a missing config file is left for the full parse to report
    if known.config and command and Path(known.config).is_file():
        _config_defaults(parser, choices[command], command, known.config)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except (ValueError, configparser.Error) as exc:
        print(f"duetrank: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (FormatError, SchemaMismatch, UnlinkableSpan, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"duetrank: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
