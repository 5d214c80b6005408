"""Command-line surface: synth, train, build, query, eval, bench.

Each command is deterministic given its config and seed (timing columns
excepted).  Operational failures print one machine-parsable line to stderr
(`error: <Name>: <detail>`) and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .config import RunConfig, load_run_config
from .errors import HashQuantError
from .evaluate import (
    CostModel,
    RetrievalTask,
    evaluate_tasks,
    memory_footprint,
    op_count,
    ranked_results,
    sweep_alpha,
    sweep_n,
)
from .features import (
    LabelSet,
    generate_pairs,
    load_features,
    load_labels,
    save_features,
    save_labels,
    synth_dataset,
)
from .quantizer import assign_indicators
from .retrieval import build_index, load_index, save_index
from .trainer import encoder_forward, load_model, save_model, train


def _parse_overrides(items) -> dict:
    overrides = {}
    for item in items or []:
        if "=" not in item:
            raise HashQuantError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _relevance(labels_q: LabelSet, labels_db: LabelSet) -> np.ndarray:
    """Boolean (num_queries, num_items) matrix of shared-label relevance."""
    return (labels_q.masks[:, None] & labels_db.masks[None, :]) != 0


def _write_csv(path, header, rows, preamble=()):
    out = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        for line in preamble:
            out.write(f"# {line}\n")
        writer = csv.writer(out)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if path:
            out.close()


def cmd_synth(args) -> int:
    features_a, features_b, labels = synth_dataset(
        clusters=args.clusters,
        per_cluster=args.per_cluster,
        dim=args.dim,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    save_features(features_a, args.out_a)
    save_features(features_b, args.out_b)
    save_labels(labels, args.out_labels)
    print(f"wrote {features_a.count} items x {features_a.dim} dims per modality")
    return 0


def cmd_train(args) -> int:
    config = load_run_config(args.config, _parse_overrides(args.set))
    features_a = load_features(args.features_a)
    features_b = load_features(args.features_b)
    labels = load_labels(args.labels)
    pairs = generate_pairs(labels, labels, config.seed, args.negative_fraction)
    for line in config.echo_lines():
        print(f"# {line}")
    result = train(features_a, features_b, pairs, config.train_config(), config.loss_weights())
    for epoch, loss in enumerate(result.losses):
        print(f"epoch={epoch} loss={loss:.6f}")
    save_model(args.out_model, result.encoder_a, result.encoder_b, result.quantizer)
    print(f"wrote model to {args.out_model}")
    return 0


def cmd_build(args) -> int:
    features = load_features(args.features)
    encoder_a, encoder_b, quantizer = load_model(args.model)
    encoder = encoder_a if args.modality == "a" else encoder_b
    encoded = encoder_forward(encoder, features.values)
    indicators = assign_indicators(encoded, quantizer, None, max_rounds=args.assign_rounds)
    index = build_index(encoded, quantizer, indicators, modality=args.modality)
    save_index(index, args.out)
    print(f"wrote index of {index.count} items to {args.out}")
    return 0


def _load_encoded(path, model_path, modality):
    features = load_features(path)
    if model_path is None:
        return features.values.astype(np.float64)
    encoder_a, encoder_b, _ = load_model(model_path)
    encoder = encoder_a if modality == "a" else encoder_b
    return encoder_forward(encoder, features.values)


def cmd_query(args) -> int:
    queries = _load_encoded(args.queries, args.model, args.modality)
    index = database = None
    if args.mode == "lossless":
        if args.database is None:
            raise HashQuantError("--mode lossless needs --database")
        database = _load_encoded(args.database, args.model, args.database_modality)
    else:
        if args.index is None:
            raise HashQuantError(f"--mode {args.mode} needs --index")
        index = load_index(args.index)
    mode = {"two_stage": "two_stage", "aqd": "full_aqd", "hash": "hash_only", "lossless": "lossless"}[
        args.mode
    ]
    rankings = ranked_results(
        queries,
        mode=mode,
        index=index,
        database_features=database,
        top_k=args.topk,
        candidates=args.candidates,
    )
    rows = [
        (query_id, rank + 1, int(item), float(score))
        for query_id, ranking in enumerate(rankings)
        for rank, (item, score) in enumerate(zip(ranking.indices, ranking.scores))
    ]
    _write_csv(args.out, ("query", "rank", "item", "score"), rows)
    return 0


def _eval_tasks(args, config: RunConfig):
    features_a = load_features(args.features_a)
    features_b = load_features(args.features_b)
    labels = load_labels(args.labels)
    encoder_a, encoder_b, quantizer = load_model(args.model)
    encoded_a = encoder_forward(encoder_a, features_a.values)
    encoded_b = encoder_forward(encoder_b, features_b.values)
    indicators_a = assign_indicators(encoded_a, quantizer, None)
    indicators_b = assign_indicators(encoded_b, quantizer, None)
    index_a = build_index(encoded_a, quantizer, indicators_a, modality="a")
    index_b = build_index(encoded_b, quantizer, indicators_b, modality="b")
    relevance = _relevance(labels, labels)
    task_i2t = RetrievalTask(queries=encoded_a, index=index_b, relevant_sets=tuple(relevance))
    task_t2i = RetrievalTask(queries=encoded_b, index=index_a, relevant_sets=tuple(relevance.T))
    return task_i2t, task_t2i, encoded_a, encoded_b


def cmd_eval(args) -> int:
    config = load_run_config(args.config, _parse_overrides(args.set))
    task_i2t, task_t2i, encoded_a, encoded_b = _eval_tasks(args, config)
    echo = config.echo_lines() + [
        f"mode={args.mode}",
        f"candidates={args.candidates}",
        f"cutoff={args.r}",
    ]
    report = evaluate_tasks(
        task_i2t,
        task_t2i,
        mode=args.mode,
        cutoff=args.r,
        candidates=args.candidates,
        database_i2t=encoded_b,
        database_t2i=encoded_a,
        config={line.split("=", 1)[0]: line.split("=", 1)[1] for line in echo},
    )
    rows = [
        (direction, query_id, ap)
        for direction, per_query in (("i2t", report.per_query_i2t), ("t2i", report.per_query_t2i))
        for query_id, ap in enumerate(per_query)
    ]
    _write_csv(args.out_csv, ("direction", "query", "ap"), rows, preamble=echo)
    print(
        f"map_i2t={report.map_i2t:.6f} map_t2i={report.map_t2i:.6f} "
        f"harmonic_mean={report.harmonic:.6f}"
    )
    return 0


def cmd_bench(args) -> int:
    if args.sweep == "alpha":
        missing = [
            flag
            for flag, value in (
                ("--features-a", args.features_a),
                ("--features-b", args.features_b),
                ("--labels", args.labels),
                ("--model", args.model),
            )
            if value is None
        ]
        if missing:
            raise HashQuantError(f"--sweep alpha needs {', '.join(missing)}")
        config = load_run_config(args.config, _parse_overrides(args.set))
        task_i2t, task_t2i, _, _ = _eval_tasks(args, config)
        alphas = [float(a) for a in args.alphas.split(",")]
        points = sweep_alpha(task_i2t, task_t2i, alphas, cutoff=args.r, repeats=args.repeats)
        count, dim = task_i2t.index.count, task_i2t.index.dim
        rows = []
        for point in points:
            cost = CostModel(
                count=count,
                dim=dim,
                num_books=config.m,
                book_size=config.k,
                candidates=point.candidates,
            )
            rows.append(
                (
                    point.alpha,
                    point.candidates,
                    f"{point.map_i2t:.6f}",
                    f"{point.map_t2i:.6f}",
                    f"{point.mean_query_seconds:.9f}",
                    op_count(cost, "hq"),
                    memory_footprint(cost, "hq"),
                )
            )
        _write_csv(
            args.out,
            ("alpha", "candidates", "map_i2t", "map_t2i", "mean_query_seconds", "hq_ops", "hq_memory_bits"),
            rows,
            preamble=config.echo_lines(),
        )
        return 0

    dims = [int(d) for d in args.dims.split(",")]
    points = sweep_n(
        dims,
        count=args.count,
        candidates=args.candidates,
        num_queries=args.queries,
        repeats=args.repeats,
        seed=args.seed,
    )
    rows = [
        (
            point.dim,
            point.quant_books,
            point.quant_book_size,
            point.hq_memory_bits,
            point.quant_memory_bits,
            f"{point.hq_seconds:.9f}",
            f"{point.quant_seconds:.9f}",
            f"{point.ratio:.4f}",
            point.predicted_hq_ops,
            point.predicted_quant_ops,
        )
        for point in points
    ]
    _write_csv(
        args.out,
        (
            "dim",
            "quant_books",
            "quant_book_size",
            "hq_memory_bits",
            "quant_memory_bits",
            "hq_seconds",
            "quant_seconds",
            "ratio",
            "predicted_hq_ops",
            "predicted_quant_ops",
        ),
        rows,
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hashquant", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate an aligned two-modality cluster dataset")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--per-cluster", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--noise-sigma", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-a", required=True)
    p.add_argument("--out-b", required=True)
    p.add_argument("--out-labels", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train encoders and quantizer, write a model file")
    p.add_argument("--features-a", required=True)
    p.add_argument("--features-b", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--negative-fraction", type=float, default=0.9)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build", help="encode features and write a retrieval index")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--modality", choices=("a", "b"), required=True)
    p.add_argument("--assign-rounds", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="rank database items for each query row")
    p.add_argument("--queries", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--model", default=None, help="encode raw queries with this model")
    p.add_argument("--modality", choices=("a", "b"), default="a")
    p.add_argument("--database", default=None, help="feature file for --mode lossless")
    p.add_argument("--database-modality", choices=("a", "b"), default="b")
    p.add_argument("--mode", choices=("two_stage", "aqd", "hash", "lossless"), default="two_stage")
    p.add_argument("--candidates", type=int, default=100)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="MAP in both directions plus harmonic mean")
    p.add_argument("--features-a", required=True)
    p.add_argument("--features-b", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--mode", choices=("two_stage", "full_aqd", "hash_only", "lossless"), default="two_stage")
    p.add_argument("--candidates", type=int, default=100)
    p.add_argument("--r", type=int, default=50)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="alpha sweep or dimension sweep, written as CSV")
    p.add_argument("--sweep", choices=("alpha", "n"), required=True)
    p.add_argument("--features-a")
    p.add_argument("--features-b")
    p.add_argument("--labels")
    p.add_argument("--model")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--alphas", default="0,0.02,0.1,0.3,1.0")
    p.add_argument("--r", type=int, default=50)
    p.add_argument("--dims", default="64,128,256,512")
    p.add_argument("--count", type=int, default=100_000)
    p.add_argument("--candidates", type=int, default=100)
    p.add_argument("--queries", type=int, default=32)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HashQuantError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: InvalidArgs: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
