#!/usr/bin/env python3
"""Candidate-budget sweep: MAP@50 and per-query time as alpha varies.

alpha = 0 ranks by hash codes alone, alpha = 1 scores every item with the
quantizer; the interior points run the two-stage pipeline with
round(alpha * N) candidates.  Writes one CSV row per alpha.
"""

import argparse
import csv
import sys

from hashquant import (
    LossWeights,
    RetrievalTask,
    TrainConfig,
    build_index,
    encoder_forward,
    generate_pairs,
    sweep_alpha,
    synth_dataset,
    train,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--clusters", type=int, default=10)
    parser.add_argument("--per-cluster", type=int, default=200)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--noise-sigma", type=float, default=0.3)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--alphas", default="0,0.02,0.05,0.1,0.2,0.4,0.7,1.0")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="CSV path (default stdout)")
    args = parser.parse_args()

    features_a, features_b, labels = synth_dataset(
        args.clusters, args.per_cluster, args.dim, args.noise_sigma, args.seed
    )
    pairs = generate_pairs(labels, labels, shuffle_seed=args.seed)
    result = train(
        features_a, features_b, pairs, TrainConfig(epochs=args.epochs, seed=args.seed), LossWeights()
    )
    encoded_a = encoder_forward(result.encoder_a, features_a.values)
    encoded_b = encoder_forward(result.encoder_b, features_b.values)
    index_a = build_index(encoded_a, result.quantizer, result.indicators_a, "a")
    index_b = build_index(encoded_b, result.quantizer, result.indicators_b, "b")
    relevance = (labels.masks[:, None] & labels.masks[None, :]) != 0
    task_i2t = RetrievalTask(queries=encoded_a, index=index_b, relevant_sets=tuple(relevance))
    task_t2i = RetrievalTask(queries=encoded_b, index=index_a, relevant_sets=tuple(relevance.T))

    alphas = [float(a) for a in args.alphas.split(",")]
    points = sweep_alpha(task_i2t, task_t2i, alphas, repeats=args.repeats)

    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    writer = csv.writer(out)
    writer.writerow(("alpha", "candidates", "map_i2t", "map_t2i", "mean_query_seconds"))
    for point in points:
        writer.writerow(
            (point.alpha, point.candidates, f"{point.map_i2t:.6f}", f"{point.map_t2i:.6f}",
             f"{point.mean_query_seconds:.9f}")
        )
    if args.out:
        out.close()


if __name__ == "__main__":
    main()
