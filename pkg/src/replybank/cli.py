"""Command-line interface: pipeline orchestration, individual stage
commands, synthetic-corpus generation, and the HTTP server.

Exit codes: 0 success, 2 validation error, 3 pipeline stage failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bank as bank_mod
from . import classifier as clf
from . import clustering, corpus, encoders, pipeline, synth
from .corpus import ValidationError


def cmd_ingest(args) -> int:
    conversations = corpus.load_conversations(args.corpus)
    records = corpus.build_frequent_set(conversations)
    corpus.write_responses_tsv(records, args.out)
    print(f"{len(records)} frequent responses from {len(conversations)} conversations")
    return 0


def cmd_candidates(args) -> int:
    records = corpus.read_responses_tsv(args.responses)
    encs = encoders.parse_encoder_spec(args.encoders, records)
    pairs = encoders.generate_candidate_pairs(records, encs, args.k)
    pipeline.write_pairs_tsv(pairs, args.out)
    print(f"{len(pairs)} candidate pairs from {len(encs)} encoder(s)")
    return 0


def cmd_cluster(args) -> int:
    records = corpus.read_responses_tsv(args.responses)
    pairs = pipeline.read_pairs_tsv(args.pairs)
    rows = clustering.read_scores_tsv(args.scores)
    scores = clustering.load_scores(pairs, rows, source=str(args.scores))
    matrix = clustering.build_distance_matrix(len(records), scores)
    clusters = clustering.agglomerate(matrix, args.threshold, records)
    clustering.write_clusters_json(clusters, args.out)
    stats = clustering.cluster_stats(clusters, records)
    singles = round(stats.singleton_fraction * stats.num_clusters)
    print(
        f"{stats.num_clusters} clusters, {singles} singletons, "
        f"largest {stats.largest_cluster_size}"
    )
    return 0


def cmd_bank_auto(args) -> int:
    records = corpus.read_responses_tsv(args.responses)
    clusters = clustering.read_clusters_json(args.clusters)
    result = bank_mod.auto_bank(clusters, records)
    bank_mod.save_bank(result, args.out)
    print(f"{len(result.classes)} classes (one per cluster)")
    return 0


def cmd_bank_replay(args) -> int:
    records = corpus.read_responses_tsv(args.responses)
    clusters = clustering.read_clusters_json(args.clusters)
    decisions = bank_mod.read_decision_log(args.decisions)
    result = bank_mod.replay_decisions(clusters, records, decisions)
    bank_mod.save_bank(result, args.out)
    print(f"{len(result.classes)} classes from {len(decisions)} decisions")
    return 0


def cmd_bank_extract(args) -> int:
    conversations = corpus.load_conversations(args.corpus)
    records = corpus.read_responses_tsv(args.responses)
    the_bank = bank_mod.load_bank(args.bank)
    result = bank_mod.extract_labeled_examples(
        conversations, the_bank, records, args.turns, args.tokens
    )
    bank_mod.write_examples(result.examples, args.out)
    print(
        f"{len(result.examples)} labeled examples "
        f"({result.labeled_fraction:.1%} of {result.total_doctor_turns} doctor turns)"
    )
    return 0


def cmd_train(args) -> int:
    examples = bank_mod.read_examples(args.examples)
    the_bank = bank_mod.load_bank(args.bank)
    config = clf.TrainConfig(
        batch_size=args.batch,
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        smoothing=args.smoothing,
    )
    model, extractor, losses = clf.fit_and_train(
        examples,
        num_classes=len(the_bank.classes),
        config=config,
        bank_version=the_bank.version,
        mode=args.mode,
    )
    if args.val:
        val = bank_mod.read_examples(args.val)
        features = extractor.transform_batch([ex.context_tokens for ex in val])
        target = "mean" if args.optout == "mean" else float(args.optout)
        model.opt_out_threshold = clf.calibrate_opt_out(model, features, target)
    clf.save_model(model, extractor, args.out)
    print(
        f"trained {model.num_classes} classes x {model.feature_dim} features, "
        f"final loss {losses[-1]:.6f}"
    )
    return 0


def cmd_eval(args) -> int:
    model, extractor = clf.load_model(args.model)
    examples = bank_mod.read_examples(args.examples)
    if not examples:
        raise ValidationError("no examples to evaluate")
    features = extractor.transform_batch([ex.context_tokens for ex in examples])
    class_ids = np.array([ex.class_id for ex in examples])
    _, tops, max_probs = clf.predict_batch(model, features)
    correct = tops == class_ids
    if args.optout_curve:
        thresholds = [round(0.05 * i, 2) for i in range(21)]
        points = clf.opt_out_curve_points(max_probs, correct, thresholds)
        with open(args.optout_curve, "w", encoding="utf-8") as fh:
            fh.write("threshold,coverage,retained_accuracy\n")
            for p in points:
                acc = "" if p.retained_accuracy is None else repr(p.retained_accuracy)
                fh.write(f"{p.threshold!r},{p.coverage!r},{acc}\n")
    kept = max_probs >= model.opt_out_threshold
    payload = {
        "numExamples": len(examples),
        "accuracy": float(correct.mean()),
        "optOutThreshold": model.opt_out_threshold,
        "coverage": float(kept.mean()),
        "retainedAccuracy": float(correct[kept].mean()) if kept.any() else None,
    }
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_metrics_unique(args) -> int:
    with open(args.suggestions, encoding="utf-8") as fh:
        suggestions = [line.rstrip("\n") for line in fh if line.strip()]
    value = clf.unique_per_100(suggestions, seed=args.seed)
    print(f"{value:.4f}")
    return 0


def cmd_pipeline_run(args) -> int:
    if args.config:
        config = pipeline.PipelineConfig.from_file(args.config)
    else:
        config = pipeline.PipelineConfig()
    result = pipeline.run_pipeline(args.corpus, config, args.workdir)
    ran = ",".join(result.stages_run) or "none"
    cached = ",".join(result.stages_cached) or "none"
    print(f"stages run: {ran}; cached: {cached}")
    return 0


def cmd_synth_gen(args) -> int:
    conversations, sidecar = synth.generate_corpus(args.classes, args.conversations, args.seed)
    synth.write_corpus(conversations, sidecar, args.out, args.truth)
    truth = args.truth or f"{args.out}.truth.json"
    print(f"{len(conversations)} conversations, truth sidecar {truth}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        model_path=args.model,
        bank_path=args.bank,
        clusters_path=args.clusters,
        responses_path=args.responses,
        decision_log_path=args.decision_log,
        threshold_override=args.threshold,
        static_dir=args.static,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="replybank")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build the frequent-response set")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("candidates", help="generate nearest-neighbor candidate pairs")
    p.add_argument("--responses", required=True)
    p.add_argument("--encoders", default="tfidf")
    p.add_argument("--k", type=int, default=encoders.DEFAULT_KNN_K)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("cluster", help="complete-linkage clustering of scored pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--threshold", type=float, default=clustering.DEFAULT_MERGE_THRESHOLD)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("bank", help="response-bank operations")
    bank_sub = p.add_subparsers(dest="bank_command", required=True)

    b = bank_sub.add_parser("auto", help="one response class per cluster")
    b.add_argument("--clusters", required=True)
    b.add_argument("--responses", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bank_auto)

    b = bank_sub.add_parser("replay", help="rebuild a bank from a decision log")
    b.add_argument("--clusters", required=True)
    b.add_argument("--responses", required=True)
    b.add_argument("--decisions", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bank_replay)

    b = bank_sub.add_parser("extract", help="extract labeled training examples")
    b.add_argument("--corpus", required=True)
    b.add_argument("--bank", required=True)
    b.add_argument("--responses", required=True)
    b.add_argument("--turns", type=int, default=corpus.DEFAULT_MAX_TURNS)
    b.add_argument("--tokens", type=int, default=corpus.DEFAULT_MAX_TOKENS)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bank_extract)

    p = sub.add_parser("train", help="train the response classifier")
    p.add_argument("--examples", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--smoothing", type=float, default=clf.DEFAULT_SMOOTHING)
    p.add_argument("--mode", choices=["tfidf", "wordvec_mean"], default="tfidf")
    p.add_argument("--val", help="validation examples for opt-out calibration")
    p.add_argument("--optout", default="mean", help='"mean" or a coverage fraction')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--optout-curve", dest="optout_curve")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="metric computations")
    metrics_sub = p.add_subparsers(dest="metrics_command", required=True)
    m = metrics_sub.add_parser("unique-per-100", help="suggestion diversity bootstrap")
    m.add_argument("--suggestions", required=True, help="file with one suggestion per line")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_metrics_unique)

    p = sub.add_parser("pipeline", help="full pipeline orchestration")
    pipe_sub = p.add_subparsers(dest="pipeline_command", required=True)
    r = pipe_sub.add_parser("run", help="run all stages into a workdir")
    r.add_argument("--corpus", required=True)
    r.add_argument("--config", help="JSON config; defaults used when omitted")
    r.add_argument("--workdir", required=True)
    r.set_defaults(func=cmd_pipeline_run)

    p = sub.add_parser("synth", help="synthetic corpus generation")
    synth_sub = p.add_subparsers(dest="synth_command", required=True)
    s = synth_sub.add_parser("gen", help="generate a labeled synthetic corpus")
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--conversations", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--truth", help="sidecar path (default: OUT.truth.json)")
    s.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default=os.environ.get("REPLYBANK_HOST", "127.0.0.1"))
    p.add_argument("--port", type=int, default=int(os.environ.get("REPLYBANK_PORT", "8000")))
    p.add_argument("--model", default=os.environ.get("REPLYBANK_MODEL"))
    p.add_argument("--bank", default=os.environ.get("REPLYBANK_BANK"))
    p.add_argument("--clusters", default=os.environ.get("REPLYBANK_CLUSTERS"))
    p.add_argument("--responses", default=os.environ.get("REPLYBANK_RESPONSES"))
    p.add_argument(
        "--decision-log", dest="decision_log", default=os.environ.get("REPLYBANK_DECISION_LOG")
    )
    p.add_argument(
        "--threshold",
        type=float,
        default=(
            float(os.environ["REPLYBANK_THRESHOLD"])
            if "REPLYBANK_THRESHOLD" in os.environ
            else None
        ),
        help="opt-out threshold override",
    )
    p.add_argument("--static", default=os.environ.get("REPLYBANK_STATIC"))
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
