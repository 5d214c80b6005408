"""Multi-codebook additive quantizer and asymmetric-distance machinery.

Each item is approximated by a sum of one column from each of m codebooks
(n x k each).  Codebooks come from a closed-form least-squares update with
indicators fixed; indicators come from per-book coordinate descent with
codebooks fixed, which is the exact exhaustive search when m = 1.  Queries
never get quantized: a per-query lookup table of query-column dot products
turns each item's similarity into m table additions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimMismatch, IndexOutOfRange, NotEnoughItems, SingularSystem
from .features import feature_values

MAX_BOOK_SIZE = 65536


@dataclass(frozen=True)
class QuantizerModel:
    """m codebooks of shape (dim, book_size); column j of book l is one atom."""

    codebooks: np.ndarray

    def __post_init__(self):
        books = np.ascontiguousarray(self.codebooks, dtype=np.float64)
        if books.ndim != 3:
            raise ValueError(f"codebooks must have shape (m, dim, k), got {books.shape}")
        m, _, k = books.shape
        if m < 1:
            raise ValueError("need at least one codebook")
        if not 1 <= k <= MAX_BOOK_SIZE:
            raise ValueError(f"book size must be in [1, {MAX_BOOK_SIZE}], got {k}")
        if not np.isfinite(books).all():
            raise ValueError("codebooks contain non-finite values")
        books.setflags(write=False)
        object.__setattr__(self, "codebooks", books)

    @property
    def num_books(self) -> int:
        return self.codebooks.shape[0]

    @property
    def dim(self) -> int:
        return self.codebooks.shape[1]

    @property
    def book_size(self) -> int:
        return self.codebooks.shape[2]


@dataclass(frozen=True)
class IndicatorSet:
    """One chosen column index per (item, book); the packed one-hot selectors."""

    book_size: int
    indices: np.ndarray

    def __post_init__(self):
        indices = np.ascontiguousarray(self.indices, dtype=np.int32)
        if indices.ndim != 2:
            raise ValueError(f"indices must have shape (count, m), got {indices.shape}")
        if indices.size and (indices.min() < 0 or indices.max() >= self.book_size):
            raise ValueError(f"indices must lie in [0, {self.book_size})")
        indices.setflags(write=False)
        object.__setattr__(self, "indices", indices)

    @property
    def count(self) -> int:
        return self.indices.shape[0]

    @property
    def num_books(self) -> int:
        return self.indices.shape[1]


@dataclass(frozen=True)
class LookupTable:
    """Per-query dot products with every codebook column, shape (m, k)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"lookup table must be 2-D, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("lookup table contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def num_books(self) -> int:
        return self.values.shape[0]

    @property
    def book_size(self) -> int:
        return self.values.shape[1]


def _as_float_matrix(features) -> np.ndarray:
    return np.asarray(feature_values(features), dtype=np.float64)


def _nearest_columns(targets: np.ndarray, book: np.ndarray) -> np.ndarray:
    """Index of the squared-distance-nearest column of `book` per target row."""
    # ||t - c||^2 = ||t||^2 - 2 t.c + ||c||^2; the ||t||^2 term is rank-free
    scores = targets @ book
    scores *= -2.0
    scores += (book * book).sum(axis=0)
    return scores.argmin(axis=1)


def reconstruct(model: QuantizerModel, indices: np.ndarray) -> np.ndarray:
    """Sum of the selected columns for each row of `indices` (shape (N, m))."""
    indices = np.atleast_2d(np.asarray(indices, dtype=np.int64))
    out = model.codebooks[0][:, indices[:, 0]].T.copy()
    for book in range(1, model.num_books):
        out += model.codebooks[book][:, indices[:, book]].T
    return out


def init_codebooks(features, num_books: int, book_size: int, seed: int) -> QuantizerModel:
    """Seed codebooks from data: sampled rows for book 1, then sampled residuals.

    Greedy assignment to each finished book produces the residuals that seed
    the next one, so later books start on what earlier books cannot express.
    """
    values = _as_float_matrix(features)
    n_items, dim = values.shape
    if n_items < book_size:
        raise NotEnoughItems(f"need at least {book_size} items to seed a book, got {n_items}")
    rng = np.random.default_rng(seed)
    books = np.empty((num_books, dim, book_size))
    residual = values.copy()
    for book in range(num_books):
        sampled = rng.choice(n_items, size=book_size, replace=False)
        books[book] = residual[sampled].T
        chosen = _nearest_columns(residual, books[book])
        residual -= books[book][:, chosen].T
    return QuantizerModel(codebooks=books)


def assign_indicators(
    features,
    model: QuantizerModel,
    prev: IndicatorSet | None = None,
    max_rounds: int = 3,
) -> IndicatorSet:
    """Choose per-item indicators by coordinate descent over the books.

    Each sweep revisits books in order, picking the column that minimizes the
    item's residual with the other books' current choices held fixed, so the
    per-item objective never increases relative to `prev`.  With one book a
    single sweep is the exhaustive minimizer.  Without `prev`, the first
    sweep assigns greedily (earlier books only), which counts toward
    max_rounds; sweeping stops early once no index changes.
    """
    values = _as_float_matrix(features)
    n_items, dim = values.shape
    if dim != model.dim:
        raise DimMismatch(f"features have dim {dim}, model has dim {model.dim}")
    num_books = model.num_books
    if prev is not None:
        if prev.count != n_items or prev.num_books != num_books:
            raise DimMismatch(
                f"previous indicators are {prev.count}x{prev.num_books}, "
                f"expected {n_items}x{num_books}"
            )
        indices = prev.indices.astype(np.int64)
        approx = reconstruct(model, indices)
        rounds_left = max_rounds
    else:
        indices = np.zeros((n_items, num_books), dtype=np.int64)
        residual = values.copy()
        for book in range(num_books):
            chosen = _nearest_columns(residual, model.codebooks[book])
            indices[:, book] = chosen
            residual -= model.codebooks[book][:, chosen].T
        approx = values - residual
        rounds_left = max_rounds - 1

    for _ in range(max(0, rounds_left)):
        changed = False
        for book in range(num_books):
            columns = model.codebooks[book]
            current = columns[:, indices[:, book]].T
            target = values - approx + current
            chosen = _nearest_columns(target, columns)
            if (chosen != indices[:, book]).any():
                changed = True
                approx += columns[:, chosen].T - current
                indices[:, book] = chosen
        if not changed:
            break
    return IndicatorSet(book_size=model.book_size, indices=indices)


def _one_hot_stats(
    values: np.ndarray, indices: np.ndarray, num_books: int, book_size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate F B^T (dim x mk) and the Gram B B^T (mk x mk)."""
    dim = values.shape[1]
    mk = num_books * book_size
    rhs = np.zeros((dim, mk))
    gram = np.zeros((mk, mk))
    for b1 in range(num_books):
        block = np.zeros((book_size, dim))
        np.add.at(block, indices[:, b1], values)
        rhs[:, b1 * book_size : (b1 + 1) * book_size] = block.T
        for b2 in range(num_books):
            joint = np.bincount(
                indices[:, b1].astype(np.int64) * book_size + indices[:, b2],
                minlength=book_size * book_size,
            ).reshape(book_size, book_size)
            gram[
                b1 * book_size : (b1 + 1) * book_size,
                b2 * book_size : (b2 + 1) * book_size,
            ] += joint
    return rhs, gram


def update_codebooks(
    features_a,
    indicators_a: IndicatorSet,
    features_b=None,
    indicators_b: IndicatorSet | None = None,
    ridge: float = 1e-8,
) -> QuantizerModel:
    """Closed-form codebook update for fixed indicators.

    Solves the joint least-squares system over the stacked one-hot indicator
    matrices of one or two modalities; ridge * I is added to the Gram before
    the Cholesky solve, which keeps the system definite when some columns
    received no assignments (those columns shrink toward zero).
    """
    values_a = _as_float_matrix(features_a)
    num_books, book_size = indicators_a.num_books, indicators_a.book_size
    if indicators_a.count != values_a.shape[0]:
        raise DimMismatch(
            f"{values_a.shape[0]} feature rows but {indicators_a.count} indicator rows"
        )
    rhs, gram = _one_hot_stats(values_a, indicators_a.indices, num_books, book_size)
    if features_b is not None:
        values_b = _as_float_matrix(features_b)
        if values_b.shape[1] != values_a.shape[1]:
            raise DimMismatch("modalities disagree on feature dimension")
        if indicators_b is None:
            raise ValueError("features_b given without indicators_b")
        if (indicators_b.num_books, indicators_b.book_size) != (num_books, book_size):
            raise DimMismatch("modalities disagree on quantizer shape")
        if indicators_b.count != values_b.shape[0]:
            raise DimMismatch(
                f"{values_b.shape[0]} feature rows but {indicators_b.count} indicator rows"
            )
        rhs_b, gram_b = _one_hot_stats(values_b, indicators_b.indices, num_books, book_size)
        rhs += rhs_b
        gram += gram_b
    if ridge:
        gram[np.diag_indices_from(gram)] += ridge
    try:
        chol = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"indicator Gram matrix is singular: {exc}") from exc
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - scipy alias
        raise SingularSystem(f"indicator Gram matrix is singular: {exc}") from exc
    solution = scipy.linalg.cho_solve(chol, rhs.T, check_finite=False).T
    dim = values_a.shape[1]
    books = solution.reshape(dim, num_books, book_size).transpose(1, 0, 2)
    return QuantizerModel(codebooks=np.ascontiguousarray(books))


def quantization_objective(features, model: QuantizerModel, indicators: IndicatorSet) -> float:
    """Total squared reconstruction error over all items."""
    values = _as_float_matrix(features)
    residual = values - reconstruct(model, indicators.indices)
    return float((residual * residual).sum())


@dataclass(frozen=True)
class QuantizerFit:
    """Result of alternating learning: model, per-modality indicators, objectives."""

    model: QuantizerModel
    indicators_a: IndicatorSet
    indicators_b: IndicatorSet | None
    objectives: tuple[float, ...]


def learn_quantizer(
    features_a,
    features_b=None,
    *,
    num_books: int,
    book_size: int,
    alternations: int = 10,
    seed: int = 0,
    assign_rounds: int = 3,
    ridge: float = 1e-8,
) -> QuantizerFit:
    """Alternate closed-form codebook updates with indicator reassignment.

    Initialization seeds the books from the stacked modalities, then each
    alternation runs one update_codebooks / assign_indicators round.  The
    objective sequence (summed over both modalities) is non-increasing, and
    alternation stops early once no indicator changes.
    """
    values_a = _as_float_matrix(features_a)
    values_b = None if features_b is None else _as_float_matrix(features_b)
    if values_b is not None and values_b.shape[1] != values_a.shape[1]:
        raise DimMismatch("modalities disagree on feature dimension")
    stacked = values_a if values_b is None else np.vstack([values_a, values_b])
    model = init_codebooks(stacked, num_books, book_size, seed)
    indicators_a = assign_indicators(values_a, model, None, max_rounds=assign_rounds)
    indicators_b = (
        None if values_b is None else assign_indicators(values_b, model, None, max_rounds=assign_rounds)
    )

    def objective() -> float:
        total = quantization_objective(values_a, model, indicators_a)
        if values_b is not None:
            total += quantization_objective(values_b, model, indicators_b)
        return total

    objectives = [objective()]
    for _ in range(alternations):
        model = update_codebooks(values_a, indicators_a, values_b, indicators_b, ridge=ridge)
        new_a = assign_indicators(values_a, model, indicators_a, max_rounds=assign_rounds)
        unchanged = (new_a.indices == indicators_a.indices).all()
        indicators_a = new_a
        if values_b is not None:
            new_b = assign_indicators(values_b, model, indicators_b, max_rounds=assign_rounds)
            unchanged = unchanged and (new_b.indices == indicators_b.indices).all()
            indicators_b = new_b
        objectives.append(objective())
        if unchanged:
            break
    return QuantizerFit(
        model=model,
        indicators_a=indicators_a,
        indicators_b=indicators_b,
        objectives=tuple(objectives),
    )


def build_lookup_table(query: np.ndarray, model: QuantizerModel) -> LookupTable:
    """Dot products of one query row with every codebook column (m x k)."""
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != model.dim:
        raise DimMismatch(f"query has dim {query.shape[0]}, model has dim {model.dim}")
    return LookupTable(values=query @ model.codebooks)


def aqd(table: LookupTable, item_indices) -> float:
    """Asymmetric similarity of the table's query to one quantized item."""
    indices = np.asarray(item_indices, dtype=np.int64).reshape(-1)
    if indices.shape[0] != table.num_books:
        raise IndexOutOfRange(
            f"expected {table.num_books} indices (one per book), got {indices.shape[0]}"
        )
    if indices.size and (indices.min() < 0 or indices.max() >= table.book_size):
        raise IndexOutOfRange(f"indices must lie in [0, {table.book_size})")
    return float(table.values[np.arange(table.num_books), indices].sum())


def aqd_scores(table: LookupTable, indicators: IndicatorSet, items: np.ndarray | None = None) -> np.ndarray:
    """Vectorized aqd over many items: m table gathers and an add per item."""
    indices = indicators.indices if items is None else indicators.indices[items]
    if indicators.num_books != table.num_books or indicators.book_size != table.book_size:
        raise DimMismatch("indicator shape does not match lookup table")
    scores = table.values[0, indices[:, 0]].astype(np.float64, copy=True)
    for book in range(1, table.num_books):
        scores += table.values[book, indices[:, book]]
    return scores


def quantization_residual_norm(feature: np.ndarray, model: QuantizerModel, indices) -> float:
    """Euclidean norm of one item's reconstruction residual."""
    feature = np.asarray(feature, dtype=np.float64).reshape(-1)
    if feature.shape[0] != model.dim:
        raise DimMismatch(f"feature has dim {feature.shape[0]}, model has dim {model.dim}")
    approx = reconstruct(model, np.asarray(indices, dtype=np.int64).reshape(1, -1))[0]
    return float(np.linalg.norm(feature - approx))
