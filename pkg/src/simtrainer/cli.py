"""Command-line pipeline: ingest logs, train artifacts, simulate, evaluate, serve.

Typical flow:

    simtrainer ingest --input logs.jsonl --output corpus.jsonl
    simtrainer train-embed --corpus corpus.jsonl --output embeddings.bin
    simtrainer cluster --corpus corpus.jsonl --embeddings embeddings.bin \
        --scripts-out scripts.jsonl --report-out clusters.jsonl
    simtrainer build-index --corpus corpus.jsonl --embeddings embeddings.bin --output index.bin
    simtrainer train-lm --corpus corpus.jsonl --output models.json
    simtrainer train-ranker --corpus corpus.jsonl --embeddings embeddings.bin \
        --lm models.json --output ranker.json
    simtrainer serve --config service.json
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import ModelBundle, load_model_bundle, save_model_bundle
from .corpus import (
    Role,
    corpus_stats,
    dialogue_to_record,
    ingest_log,
    write_dialogues,
)
from .errors import SimtrainerError
from .intentcluster import ClusterParams, hdbscan, select_representatives
from .respond import (
    FeatureExtractor,
    RankerConfig,
    train_ngram,
    train_ranker,
    save_ranker,
)
from .scorecard import (
    ScoreBundle,
    aggregate_metrics,
    calibrate_fluency,
    format_metrics_table,
    load_rules,
    score_report,
    score_session,
)
from .service import ServiceConfig, build_runtime, serve
from .simcore import CloseReason, SessionPhase, load_session_records, SessionEventLog
from .textenc import (
    HybridMatcher,
    SgnsConfig,
    build_vocab,
    embed_text,
    load_embeddings,
    save_embeddings,
    train_sgns,
)
from .vindex import ContextPayload, VectorIndex, make_entries

CONTEXT_WINDOW = 4


def _dialogue_intent_text(dialogue) -> str:
    """Clustering feature: the first two customer turns, concatenated."""
    texts = [t.text for t in dialogue.turns if t.role is Role.CUSTOMER][:2]
    return " ".join(texts)


def _context_entries(dialogues, embeddings, vocab):
    """(vector, payload) rows mapping each context to its next customer utterance."""
    vectors, payloads = [], []
    for dialogue in dialogues:
        for j, turn in enumerate(dialogue.turns):
            if j == 0 or turn.role is not Role.CUSTOMER:
                continue
            context = " ".join(t.text for t in dialogue.turns[max(0, j - CONTEXT_WINDOW) : j])
            vectors.append(embed_text(context, embeddings, vocab).vector)
            payloads.append(ContextPayload(dialogue.id, j, turn.text))
    return make_entries(vectors, payloads)


def cmd_ingest(args) -> int:
    result = ingest_log(args.input)
    write_dialogues(result.dialogues, args.output)
    if args.errors_out:
        with open(args.errors_out, "w", encoding="utf-8") as fh:
            for err in result.errors:
                fh.write(json.dumps({"line": err.line, "message": err.message}) + "\n")
    stats = corpus_stats(result.dialogues).as_report()
    print(
        f"ingested {stats['num_dialogs']} dialogues "
        f"(avg rounds {stats['avg_rounds']:.1f}, avg length {stats['avg_length']:.1f} chars), "
        f"{len(result.errors)} malformed lines"
    )
    for err in result.errors[:10]:
        print(f"  line {err.line}: {err.message}", file=sys.stderr)
    return 0


def cmd_train_embed(args) -> int:
    result = ingest_log(args.corpus)
    config = SgnsConfig(
        dim=args.dim,
        window=args.window,
        negatives=args.negatives,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )
    vocab = build_vocab(result.dialogues, min_count=args.min_count)
    matrix = train_sgns(result.dialogues, config, vocab)
    save_embeddings(args.output, vocab, matrix)
    print(f"trained {len(vocab)} x {matrix.dim} embeddings -> {args.output}")
    return 0


def cmd_cluster(args) -> int:
    result = ingest_log(args.corpus)
    vocab, matrix = load_embeddings(args.embeddings)
    points = np.vstack(
        [embed_text(_dialogue_intent_text(d), matrix, vocab).vector for d in result.dialogues]
    )
    clusters = hdbscan(
        points,
        ClusterParams(min_cluster_size=args.min_cluster_size, min_samples=args.min_samples),
    )
    scenes = select_representatives(clusters, result.dialogues, points, args.per_cluster)
    scripts = [script for scene in scenes for script in scene.representative_scripts]
    write_dialogues(scripts, args.scripts_out)
    if args.report_out:
        with open(args.report_out, "w", encoding="utf-8") as fh:
            for i, scene in enumerate(scenes):
                fh.write(
                    json.dumps(
                        {
                            "scene_id": scene.scene_id,
                            "size": len(scene.member_dialogue_ids),
                            "stability": float(clusters.stabilities[i]),
                            "representative_ids": [
                                s.id for s in scene.representative_scripts
                            ],
                        }
                    )
                    + "\n"
                )
    noise = int((clusters.labels == -1).sum())
    print(
        f"clustered {len(result.dialogues)} dialogues into {len(scenes)} scenes "
        f"({noise} noise), {len(scripts)} scripts -> {args.scripts_out}"
    )
    return 0


def cmd_build_index(args) -> int:
    result = ingest_log(args.corpus)
    vocab, matrix = load_embeddings(args.embeddings)
    entries = _context_entries(result.dialogues, matrix, vocab)
    index = VectorIndex.build(entries, approx=args.approx, seed=args.seed)
    index.save(args.output)
    mode = "approximate" if args.approx else "exact"
    print(f"built {mode} index with {len(index)} entries -> {args.output}")
    return 0


def cmd_train_lm(args) -> int:
    result = ingest_log(args.corpus)
    customer_texts = [
        t.text for d in result.dialogues for t in d.turns if t.role is Role.CUSTOMER
    ]
    agent_texts = [t.text for d in result.dialogues for t in d.turns if t.role is Role.AGENT]
    generator_lm = train_ngram(customer_texts, order=args.order)
    fluency_lm = train_ngram(agent_texts, order=args.order)
    calibration = calibrate_fluency(fluency_lm, agent_texts)
    save_model_bundle(ModelBundle(generator_lm, fluency_lm, calibration), args.output)
    print(
        f"trained order-{args.order} models on {len(customer_texts)} customer / "
        f"{len(agent_texts)} agent turns -> {args.output}"
    )
    return 0


def cmd_train_ranker(args) -> int:
    result = ingest_log(args.corpus)
    vocab, matrix = load_embeddings(args.embeddings)
    bundle = load_model_bundle(args.lm)
    extractor = FeatureExtractor(matrix, vocab, bundle.generator_lm)

    positives, customer_pool = [], []
    for dialogue in result.dialogues:
        for j, turn in enumerate(dialogue.turns):
            if j == 0 or turn.role is not Role.CUSTOMER:
                continue
            context = " ".join(t.text for t in dialogue.turns[max(0, j - CONTEXT_WINDOW) : j])
            prior = [t.text for t in dialogue.turns[:j] if t.role is Role.CUSTOMER]
            positives.append((context, prior[-1] if prior else "", turn.text, dialogue.id))
            customer_pool.append((dialogue.id, turn.text))
    if len({d for d, _ in customer_pool}) < 2:
        print("ranker training needs customer turns from at least 2 dialogues", file=sys.stderr)
        return 1

    rng = np.random.default_rng(args.seed)
    negatives = []
    for context, last_customer, _, dialogue_id in positives:
        while True:
            other_id, other_text = customer_pool[int(rng.integers(len(customer_pool)))]
            if other_id != dialogue_id:
                break
        negatives.append((context, last_customer, other_text))
    ranker = train_ranker(
        [(c, l, r) for c, l, r, _ in positives],
        negatives,
        extractor,
        RankerConfig(epochs=args.epochs, learning_rate=args.learning_rate, seed=args.seed),
    )
    save_ranker(ranker, args.output)
    print(f"trained ranker on {len(positives)} pairs per class -> {args.output}")
    return 0


def _simulate_config(args) -> ServiceConfig:
    return ServiceConfig(
        scripts_path=args.scripts,
        embeddings_path=args.embeddings,
        lm_path=args.lm,
        ranker_path=args.ranker,
        index_path=args.index,
        rules_path=args.rules,
        session_log_dir=args.log_dir,
        advance_threshold=args.advance_threshold,
        max_rounds=args.max_rounds,
        seed=args.seed,
    )


def cmd_simulate(args) -> int:
    runtime = build_runtime(_simulate_config(args))
    engine = runtime.engine
    try:
        state, opening = engine.start_session(args.scene)
    except SimtrainerError as exc:
        print(f"cannot start session: {exc}", file=sys.stderr)
        return 1
    print(f"[bot] {opening}")

    if args.trainee == "echo":
        while state.phase is SessionPhase.AWAIT_AGENT:
            reply = state.script.turns[state.cursor].text
            result = engine.agent_reply(state, reply)
            print(f"[trainee] {reply}")
            print(f"[bot/{result.path.value}] {result.bot_utterance}")
    else:
        lines = [
            line.strip()
            for line in Path(args.transcript).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        for line in lines:
            if state.phase is not SessionPhase.AWAIT_AGENT:
                break
            result = engine.agent_reply(state, line)
            print(f"[trainee] {line}")
            print(f"[bot/{result.path.value}] {result.bot_utterance}")

    reason = (
        CloseReason.COMPLETED
        if state.phase is SessionPhase.COMPLETED
        else CloseReason.TRAINEE_QUIT
    )
    record = engine.close_session(state, reason)
    print(
        f"session {record.session_id}: completed={record.completed} "
        f"rounds={len(record.transcript)} log -> {args.log_dir}"
    )
    return 0


def cmd_evaluate(args) -> int:
    log = SessionEventLog(args.log_dir)
    records = load_session_records(log)
    if not records:
        print(f"no sessions found in {args.log_dir}", file=sys.stderr)
        return 1
    vocab, matrix = load_embeddings(args.embeddings)
    models = load_model_bundle(args.lm)
    scorer = ScoreBundle(
        lm=models.fluency_lm,
        calibration=models.calibration,
        matcher=HybridMatcher(matrix, vocab),
        rules=load_rules(args.rules) if args.rules else [],
    )
    reports = [score_report(r.session_id, score_session(r, scorer)) for r in records]
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            for report in reports:
                fh.write(json.dumps(report, ensure_ascii=False) + "\n")
    for report in reports:
        print(
            f"{report['session_id']}: final={report['final']:.3f} "
            f"(fluency {report['fluency']:.3f}, consistency {report['consistency']:.3f}, "
            f"compliance {report['compliance']})"
        )
    print()
    print(format_metrics_table(aggregate_metrics(records)))
    return 0


def cmd_serve(args) -> int:
    config = ServiceConfig.from_file(args.config, seed=args.seed)
    serve(config)
    return 0


def _add_common_artifact_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scripts", required=True, help="script file (line-delimited records)")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--lm", required=True, help="model bundle from train-lm")
    p.add_argument("--ranker", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--rules", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simtrainer", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and validate raw dialogue logs")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--errors-out", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-embed", help="train skip-gram embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dim", type=int, default=200)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=0.025)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_embed)

    p = sub.add_parser("cluster", help="mine intent scenes and representative scripts")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--scripts-out", required=True)
    p.add_argument("--report-out", default=None)
    p.add_argument("--min-cluster-size", type=int, default=5)
    p.add_argument("--min-samples", type=int, default=None)
    p.add_argument("--per-cluster", type=int, default=3)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("build-index", help="build the context retrieval index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--approx", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("train-lm", help="train the generation and fluency language models")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--order", type=int, default=3)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("train-ranker", help="train the candidate reasonableness ranker")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_ranker)

    p = sub.add_parser("simulate", help="run one scripted trainee session for batch testing")
    _add_common_artifact_args(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--log-dir", required=True)
    p.add_argument("--trainee", choices=["echo", "file"], default="echo")
    p.add_argument("--transcript", default=None, help="trainee utterances, one per line")
    p.add_argument("--advance-threshold", type=float, default=0.5)
    p.add_argument("--max-rounds", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score recorded sessions and aggregate metrics")
    p.add_argument("--log-dir", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--rules", default=None)
    p.add_argument("--output", default=None, help="score reports, one JSON record per line")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate" and args.trainee == "file" and not args.transcript:
        print("--transcript is required with --trainee file", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except SimtrainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
