"""Accuracy metrics, cost accounting, and the efficiency sweeps.

MAP@R follows the convention that a perfect ranking scores 1: average
precision is normalized by min(|relevant|, R).  The cost model gives exact
bit and operation counts for the four retrieval variants, and the two
sweeps measure what the model predicts: query time versus the candidate
budget (alpha) and the hash-filtered pipeline versus an equal-memory
quantization-only configuration as the feature dimension grows.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleBudget, KNotPowerOfTwo
from .hashing import sign_encode
from .quantizer import IndicatorSet, QuantizerModel
from .retrieval import (
    RankedResult,
    RetrievalIndex,
    full_aqd_query,
    hash_only_query,
    lossless_query,
    two_stage_query,
)

VARIANTS = ("lossless", "binary_hash", "quantization", "hq")


def average_precision_at(ranking, relevant, cutoff: int = 50) -> float:
    """Average precision of one ranking, truncated at `cutoff`.

    Args:
        ranking: RankedResult or sequence of item indices, best first.
        relevant: Relevant database item indices (set/array) or boolean mask.
        cutoff: Rank cutoff R.

    Returns:
        AP@R in [0, 1]: sum of precision-at-hit over the first R ranks,
        divided by min(|relevant|, R); 0 when nothing is relevant.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    indices = ranking.indices if isinstance(ranking, RankedResult) else np.asarray(ranking, dtype=np.int64)
    indices = indices[:cutoff]
    relevant = np.asarray(relevant)
    if relevant.dtype == bool:
        n_relevant = int(relevant.sum())
        hits = relevant[indices]
    else:
        relevant_set = np.unique(relevant.astype(np.int64))
        n_relevant = relevant_set.shape[0]
        hits = np.isin(indices, relevant_set)
    if n_relevant == 0:
        return 0.0
    ranks = np.arange(1, indices.shape[0] + 1, dtype=np.float64)
    precision_at = np.cumsum(hits) / ranks
    return float((precision_at * hits).sum() / min(n_relevant, cutoff))


def map_at(
    query_features: np.ndarray,
    relevant_sets,
    *,
    mode: str,
    index: RetrievalIndex | None = None,
    database_features: np.ndarray | None = None,
    cutoff: int = 50,
    candidates: int = 100,
) -> float:
    """Mean AP@cutoff over all query rows for one retrieval mode.

    `relevant_sets` holds one entry per query (index collection or boolean
    mask over the database).  `candidates` only applies to two_stage and is
    clamped to the database size.
    """
    rankings = ranked_results(
        query_features,
        mode=mode,
        index=index,
        database_features=database_features,
        top_k=cutoff,
        candidates=candidates,
    )
    scores = [
        average_precision_at(ranking, relevant, cutoff)
        for ranking, relevant in zip(rankings, relevant_sets)
    ]
    return float(np.mean(scores))


def ranked_results(
    query_features: np.ndarray,
    *,
    mode: str,
    index: RetrievalIndex | None = None,
    database_features: np.ndarray | None = None,
    top_k: int = 50,
    candidates: int = 100,
) -> list[RankedResult]:
    """Run one retrieval mode over every query row."""
    queries = np.atleast_2d(np.asarray(query_features, dtype=np.float64))
    if mode == "lossless":
        if database_features is None:
            raise ValueError("lossless mode needs database_features")
        n_items = np.asarray(database_features).shape[0]
        top_k = min(top_k, n_items)
        return [lossless_query(q, database_features, top_k) for q in queries]
    if index is None:
        raise ValueError(f"{mode} mode needs an index")
    n_items = index.count
    if mode == "two_stage":
        budget = min(candidates, n_items)
        depth = min(top_k, budget)
        return [two_stage_query(q, index, candidates=budget, top_k=depth) for q in queries]
    if mode == "full_aqd":
        depth = min(top_k, n_items)
        return [full_aqd_query(q, index, top_k=depth) for q in queries]
    if mode == "hash_only":
        depth = min(top_k, n_items)
        return [hash_only_query(q, index, top_k=depth) for q in queries]
    raise ValueError(f"unknown mode {mode!r}")


def harmonic_mean(a: float, b: float) -> float:
    """2ab / (a + b), with the 0/0 case defined as 0."""
    if a + b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


@dataclass(frozen=True)
class EvalReport:
    """Both directional MAPs, their harmonic mean, and the per-query APs.

    The harmonic field is derived, never caller-supplied, so the invariant
    harmonic = 2ab/(a+b) holds by construction.
    """

    map_i2t: float
    map_t2i: float
    per_query_i2t: tuple[float, ...]
    per_query_t2i: tuple[float, ...]
    config: dict
    harmonic: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "harmonic", harmonic_mean(self.map_i2t, self.map_t2i))


def evaluate_tasks(
    task_i2t: "RetrievalTask",
    task_t2i: "RetrievalTask",
    *,
    mode: str = "two_stage",
    cutoff: int = 50,
    candidates: int = 100,
    database_i2t: np.ndarray | None = None,
    database_t2i: np.ndarray | None = None,
    config: dict | None = None,
) -> EvalReport:
    """Per-query AP in both directions, rolled up into one report."""
    per_query = []
    for task, database in ((task_i2t, database_i2t), (task_t2i, database_t2i)):
        rankings = ranked_results(
            task.queries,
            mode=mode,
            index=task.index,
            database_features=database,
            top_k=cutoff,
            candidates=candidates,
        )
        per_query.append(
            tuple(
                average_precision_at(ranking, relevant, cutoff)
                for ranking, relevant in zip(rankings, task.relevant_sets)
            )
        )
    return EvalReport(
        map_i2t=float(np.mean(per_query[0])),
        map_t2i=float(np.mean(per_query[1])),
        per_query_i2t=per_query[0],
        per_query_t2i=per_query[1],
        config=dict(config or {}),
    )


@dataclass(frozen=True)
class CostModel:
    """Parameters the accounting formulas need; candidates is the alpha*N count."""

    count: int
    dim: int
    num_books: int
    book_size: int
    candidates: int = 100

    @property
    def alpha(self) -> float:
        return self.candidates / self.count


def _log2_exact(k: int) -> int:
    if k < 1 or (k & (k - 1)) != 0:
        raise KNotPowerOfTwo(f"bit accounting needs a power-of-two book size, got {k}")
    return k.bit_length() - 1


def memory_footprint(cost: CostModel, variant: str) -> int:
    """Exact storage bits for one retrieval variant.

    lossless: 32 N n          binary_hash: N n
    quantization: 32 m k n + N m log2(k)
    hq: N n + 32 m k n + N m log2(k)
    """
    n_items, dim = cost.count, cost.dim
    if variant == "lossless":
        return 32 * n_items * dim
    if variant == "binary_hash":
        return n_items * dim
    books_bits = 32 * cost.num_books * cost.book_size * dim
    code_bits = n_items * cost.num_books * _log2_exact(cost.book_size)
    if variant == "quantization":
        return books_bits + code_bits
    if variant == "hq":
        return n_items * dim + books_bits + code_bits
    raise ValueError(f"unknown variant {variant!r}")


def op_count(cost: CostModel, variant: str) -> int:
    """Operations per query for one retrieval variant.

    lossless / binary_hash: N n
    quantization: m k n + N m
    hq: N n + m k n + candidates * m
    """
    n_items, dim = cost.count, cost.dim
    table_ops = cost.num_books * cost.book_size * dim
    if variant in ("lossless", "binary_hash"):
        return n_items * dim
    if variant == "quantization":
        return table_ops + n_items * cost.num_books
    if variant == "hq":
        return n_items * dim + table_ops + cost.candidates * cost.num_books
    raise ValueError(f"unknown variant {variant!r}")


@dataclass(frozen=True)
class RetrievalTask:
    """One evaluation direction: queries against an index with ground truth."""

    queries: np.ndarray
    index: RetrievalIndex
    relevant_sets: tuple


@dataclass(frozen=True)
class AlphaSweepPoint:
    alpha: float
    candidates: int
    map_i2t: float
    map_t2i: float
    mean_query_seconds: float


def _median_seconds(run, repeats: int) -> float:
    run()  # warm-up: first touch dominates otherwise
    times = []
    for _ in range(max(5, repeats)):
        start = time.perf_counter()
        run()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def sweep_alpha(
    task_i2t: RetrievalTask,
    task_t2i: RetrievalTask,
    alphas,
    cutoff: int = 50,
    repeats: int = 5,
) -> list[AlphaSweepPoint]:
    """MAP and per-query time as the candidate budget fraction varies.

    alpha = 0 ranks with hash codes only; alpha > 0 runs the two-stage query
    with max(1, round(alpha * N)) candidates, so alpha = 1 matches the
    quantization-only ranking.  Times are medians over >= 5 repetitions of
    the full query set, divided by the query count.
    """
    points = []
    n_items = task_i2t.index.count
    total_queries = len(task_i2t.queries) + len(task_t2i.queries)
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        if alpha == 0.0:
            budget = 0
            mode, kwargs = "hash_only", {}
        else:
            budget = max(1, round(alpha * n_items))
            mode, kwargs = "two_stage", {"candidates": budget}
        maps = []
        for task in (task_i2t, task_t2i):
            maps.append(
                map_at(
                    task.queries,
                    task.relevant_sets,
                    mode=mode,
                    index=task.index,
                    cutoff=cutoff,
                    **kwargs,
                )
            )

        depth = min(cutoff, n_items if budget == 0 else budget)

        def run_queries():
            for task in (task_i2t, task_t2i):
                for row in task.queries:
                    if mode == "hash_only":
                        hash_only_query(row, task.index, top_k=depth)
                    else:
                        two_stage_query(row, task.index, candidates=budget, top_k=depth)

        seconds = _median_seconds(run_queries, repeats) / total_queries
        points.append(
            AlphaSweepPoint(
                alpha=float(alpha),
                candidates=budget,
                map_i2t=maps[0],
                map_t2i=maps[1],
                mean_query_seconds=seconds,
            )
        )
    return points


def equal_memory_quantizer(
    dim: int,
    count: int,
    hq_books: int = 4,
    hq_book_size: int = 256,
    tolerance: float = 0.05,
) -> tuple[int, int]:
    """Pick (m2, k2) so quantization-only memory matches the hq footprint.

    Prefers the largest power-of-two k2 whose dictionary storage stays under
    half of the per-book budget (so the budget is spent on per-item code
    bits, the regime the cost model is about), falling back to any shape
    within tolerance.  Raises InfeasibleBudget when nothing fits.
    """
    target = memory_footprint(
        CostModel(count=count, dim=dim, num_books=hq_books, book_size=hq_book_size), "hq"
    )
    fitting = []
    for exponent in range(1, 17):
        book_size = 2**exponent
        per_book = count * exponent + 32 * book_size * dim
        for num_books in {max(1, round(target / per_book)), max(1, target // per_book)}:
            footprint = memory_footprint(
                CostModel(count=count, dim=dim, num_books=num_books, book_size=book_size),
                "quantization",
            )
            gap = abs(footprint - target) / target
            if gap <= tolerance:
                capped = 32 * book_size * dim <= 0.5 * count * exponent
                fitting.append((capped, book_size, num_books, gap))
    if not fitting:
        raise InfeasibleBudget(
            f"no (m2, k2) within tolerance {tolerance:g} of {target} bits at dim={dim}, count={count}"
        )
    fitting.sort(key=lambda row: (not row[0], -row[1], row[3]))
    _, book_size, num_books, _ = fitting[0]
    return num_books, book_size


@dataclass(frozen=True)
class NSweepPoint:
    dim: int
    quant_books: int
    quant_book_size: int
    hq_memory_bits: int
    quant_memory_bits: int
    hq_seconds: float
    quant_seconds: float
    ratio: float
    predicted_hq_ops: int
    predicted_quant_ops: int


def sweep_n(
    dims,
    count: int = 100_000,
    hq_books: int = 4,
    hq_book_size: int = 256,
    candidates: int = 100,
    num_queries: int = 32,
    repeats: int = 7,
    seed: int = 0,
) -> list[NSweepPoint]:
    """Two-stage versus equal-memory quantization-only time across dims.

    Database content is synthetic and seeded; the timed work (word XOR and
    popcount, table gathers, partial selection) does not depend on the code
    values, so codebooks are sampled feature rows and indicators are drawn
    uniformly instead of being learned, which keeps the sweep about the
    query path.  Reported times are medians of `repeats` passes over the
    query set, per query.
    """
    rng = np.random.default_rng(seed)
    points = []
    for dim in dims:
        quant_books, quant_book_size = equal_memory_quantizer(
            dim, count, hq_books, hq_book_size
        )
        database = rng.standard_normal((count, dim)).astype(np.float32)
        queries = rng.standard_normal((num_queries, dim))
        codes = sign_encode(database)

        def sampled_model(num_books: int, book_size: int) -> QuantizerModel:
            picks = rng.choice(count, size=(num_books, book_size))
            return QuantizerModel(codebooks=database[picks].transpose(0, 2, 1).astype(np.float64))

        hq_index = RetrievalIndex(
            codes=codes,
            quantizer=sampled_model(hq_books, hq_book_size),
            indicators=IndicatorSet(
                book_size=hq_book_size,
                indices=rng.integers(0, hq_book_size, size=(count, hq_books), dtype=np.int32),
            ),
        )
        quant_index = RetrievalIndex(
            codes=codes,
            quantizer=sampled_model(quant_books, quant_book_size),
            indicators=IndicatorSet(
                book_size=quant_book_size,
                indices=rng.integers(0, quant_book_size, size=(count, quant_books), dtype=np.int32),
            ),
        )

        def run_hq():
            for row in queries:
                two_stage_query(row, hq_index, candidates=candidates, top_k=min(50, candidates))

        def run_quant():
            for row in queries:
                full_aqd_query(row, quant_index, top_k=50)

        hq_seconds = _median_seconds(run_hq, repeats) / num_queries
        quant_seconds = _median_seconds(run_quant, repeats) / num_queries
        hq_cost = CostModel(
            count=count, dim=dim, num_books=hq_books, book_size=hq_book_size, candidates=candidates
        )
        quant_cost = CostModel(
            count=count, dim=dim, num_books=quant_books, book_size=quant_book_size
        )
        points.append(
            NSweepPoint(
                dim=dim,
                quant_books=quant_books,
                quant_book_size=quant_book_size,
                hq_memory_bits=memory_footprint(hq_cost, "hq"),
                quant_memory_bits=memory_footprint(quant_cost, "quantization"),
                hq_seconds=hq_seconds,
                quant_seconds=quant_seconds,
                ratio=quant_seconds / hq_seconds,
                predicted_hq_ops=op_count(hq_cost, "hq"),
                predicted_quant_ops=op_count(quant_cost, "quantization"),
            )
        )
    return points
