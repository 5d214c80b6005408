#!/usr/bin/env python3
"""End-to-end quality experiment on synthetic clusters.

Trains both encoders with the four-term loss, builds an index per modality,
and prints MAP@50 for the two-stage pipeline against the hash-only and
cosine (lossless) references, in both retrieval directions.
"""

import argparse
import time

from hashquant import (
    LossWeights,
    TrainConfig,
    build_index,
    encoder_forward,
    generate_pairs,
    map_at,
    synth_dataset,
    train,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--clusters", type=int, default=10)
    parser.add_argument("--per-cluster", type=int, default=500)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--noise-sigma", type=float, default=0.3)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--candidates", type=int, default=100)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    start = time.time()
    features_a, features_b, labels = synth_dataset(
        args.clusters, args.per_cluster, args.dim, args.noise_sigma, args.seed
    )
    pairs = generate_pairs(labels, labels, shuffle_seed=args.seed)
    config = TrainConfig(epochs=args.epochs, seed=args.seed)
    result = train(features_a, features_b, pairs, config, LossWeights())
    print(f"trained {args.epochs} epochs in {time.time() - start:.1f}s; "
          f"loss {result.losses[0]:.1f} -> {result.losses[-1]:.1f}")

    encoded_a = encoder_forward(result.encoder_a, features_a.values)
    encoded_b = encoder_forward(result.encoder_b, features_b.values)
    index_a = build_index(encoded_a, result.quantizer, result.indicators_a, "a")
    index_b = build_index(encoded_b, result.quantizer, result.indicators_b, "b")
    relevance = (labels.masks[:, None] & labels.masks[None, :]) != 0

    print(f"{'direction':10s} {'two_stage':>10s} {'hash_only':>10s} {'lossless':>10s}")
    for name, queries, index, database, relevant in (
        ("i2t", encoded_a, index_b, encoded_b, tuple(relevance)),
        ("t2i", encoded_b, index_a, encoded_a, tuple(relevance.T)),
    ):
        two_stage = map_at(
            queries, relevant, mode="two_stage", index=index, candidates=args.candidates
        )
        hash_only = map_at(queries, relevant, mode="hash_only", index=index)
        lossless = map_at(queries, relevant, mode="lossless", database_features=database)
        print(f"{name:10s} {two_stage:10.4f} {hash_only:10.4f} {lossless:10.4f}")
    print(f"total {time.time() - start:.1f}s")


if __name__ == "__main__":
    main()
