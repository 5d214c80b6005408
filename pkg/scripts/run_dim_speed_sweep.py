#!/usr/bin/env python3
"""Equal-memory speed comparison as the feature dimension grows.

For each dimension, a quantization-only configuration is sized to match the
two-stage model's total memory within 5%; both then answer the same queries
and the ratio column reports how much slower the unfiltered scoring is.
"""

import argparse
import csv
import sys

from hashquant import sweep_n


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dims", default="64,128,256,512")
    parser.add_argument("--count", type=int, default=100_000)
    parser.add_argument("--candidates", type=int, default=100)
    parser.add_argument("--queries", type=int, default=24)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="CSV path (default stdout)")
    args = parser.parse_args()

    points = sweep_n(
        [int(d) for d in args.dims.split(",")],
        count=args.count,
        candidates=args.candidates,
        num_queries=args.queries,
        repeats=args.repeats,
        seed=args.seed,
    )
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    writer = csv.writer(out)
    writer.writerow(
        ("dim", "quant_books", "quant_book_size", "hq_memory_bits", "quant_memory_bits",
         "hq_seconds", "quant_seconds", "ratio", "predicted_hq_ops", "predicted_quant_ops")
    )
    for point in points:
        writer.writerow(
            (point.dim, point.quant_books, point.quant_book_size, point.hq_memory_bits,
             point.quant_memory_bits, f"{point.hq_seconds:.9f}", f"{point.quant_seconds:.9f}",
             f"{point.ratio:.4f}", point.predicted_hq_ops, point.predicted_quant_ops)
        )
    if args.out:
        out.close()


if __name__ == "__main__":
    main()
