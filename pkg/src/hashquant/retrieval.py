"""Immutable retrieval index and the two-stage query plus baseline modes.

A query runs in two stages: its sign code filters the database down to a
small candidate set by Hamming distance, then a per-query lookup table
re-ranks the candidates by asymmetric quantizer similarity against their
codebook reconstructions.  The quantization-only, hash-only, and cosine
(lossless) modes answer the same question with a single stage each, which
makes them both baselines and oracles for the endpoint cases.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    DimMismatch,
    IoFailure,
    TooManyCandidates,
    TruncatedFile,
    VersionMismatch,
    ZeroNormVector,
)
from .features import feature_values
from .hashing import (
    PackedCodes,
    _smallest_by_key,
    hamming_distances,
    hamming_top_candidates,
    sign_encode,
    words_per_code,
)
from .quantizer import IndicatorSet, QuantizerModel, aqd_scores, build_lookup_table

INDEX_MAGIC = b"HQX1"
INDEX_VERSION = 1
DEFAULT_CANDIDATES = 100


@dataclass(frozen=True)
class RetrievalIndex:
    """Hash codes + quantizer + indicators for one modality's database."""

    codes: PackedCodes
    quantizer: QuantizerModel
    indicators: IndicatorSet
    modality: str = ""

    def __post_init__(self):
        if self.codes.count != self.indicators.count:
            raise CountMismatch(
                f"{self.codes.count} hash codes but {self.indicators.count} indicator rows"
            )
        if self.codes.dim != self.quantizer.dim:
            raise DimMismatch(
                f"hash codes have dim {self.codes.dim}, quantizer has dim {self.quantizer.dim}"
            )
        if self.indicators.num_books != self.quantizer.num_books:
            raise DimMismatch("indicators and quantizer disagree on book count")
        if self.indicators.book_size != self.quantizer.book_size:
            raise DimMismatch("indicators and quantizer disagree on book size")

    @property
    def count(self) -> int:
        return self.codes.count

    @property
    def dim(self) -> int:
        return self.codes.dim


@dataclass(frozen=True)
class RankedResult:
    """Item indices with scores, strictly ordered by (score desc, index asc)."""

    indices: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        if indices.shape != scores.shape or indices.ndim != 1:
            raise ValueError("indices and scores must be equal-length 1-D arrays")
        if indices.shape[0] > 1:
            diffs = np.diff(scores)
            if (diffs > 0).any():
                raise ValueError("scores must be non-increasing")
            tied = diffs == 0
            if (np.diff(indices)[tied] <= 0).any():
                raise ValueError("tied scores must keep ascending item order")
        indices.setflags(write=False)
        scores.setflags(write=False)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return self.indices.shape[0]


def build_index(
    features,
    quantizer: QuantizerModel,
    indicators: IndicatorSet,
    modality: str = "",
) -> RetrievalIndex:
    """Sign-encode the database features and bundle them with their codes."""
    values = feature_values(features)
    if values.shape[1] != quantizer.dim:
        raise DimMismatch(f"features have dim {values.shape[1]}, quantizer has dim {quantizer.dim}")
    if values.shape[0] != indicators.count:
        raise CountMismatch(f"{values.shape[0]} feature rows but {indicators.count} indicator rows")
    return RetrievalIndex(
        codes=sign_encode(values),
        quantizer=quantizer,
        indicators=indicators,
        modality=modality,
    )


def _query_row(query_feature, dim: int) -> np.ndarray:
    row = np.asarray(query_feature, dtype=np.float64).reshape(-1)
    if row.shape[0] != dim:
        raise DimMismatch(f"query has dim {row.shape[0]}, index has dim {dim}")
    return row


def _rank_candidates(scores: np.ndarray, candidates: np.ndarray, top_k: int) -> RankedResult:
    order = np.lexsort((candidates, -scores))[:top_k]
    return RankedResult(indices=candidates[order], scores=scores[order])


def _top_by_score(scores: np.ndarray, top_k: int) -> np.ndarray:
    """Exact (score desc, index asc) top selection with partial sort."""
    n = scores.shape[0]
    if top_k >= n:
        return np.lexsort((np.arange(n), -scores))[:top_k]
    picked = np.argpartition(-scores, top_k - 1)[:top_k]
    # widen to every item tied with the boundary score so index ties stay exact
    pool = np.flatnonzero(scores >= scores[picked].min())
    order = np.lexsort((pool, -scores[pool]))[:top_k]
    return pool[order]


def two_stage_query(
    query_feature,
    index: RetrievalIndex,
    candidates: int = DEFAULT_CANDIDATES,
    top_k: int = 10,
) -> RankedResult:
    """Hamming filter to `candidates` items, then asymmetric re-ranking.

    Stage one sign-encodes the query and keeps the `candidates` items with
    the smallest Hamming distance (ties by ascending index).  Stage two
    builds one lookup table and returns the `top_k` candidates by descending
    quantizer similarity, again breaking ties by ascending index.
    """
    row = _query_row(query_feature, index.dim)
    if candidates > index.count:
        raise TooManyCandidates(f"asked for {candidates} of {index.count} items")
    if top_k > candidates:
        raise TooManyCandidates(f"top_k {top_k} exceeds candidate budget {candidates}")
    query_codes = sign_encode(row.reshape(1, -1))
    shortlist = hamming_top_candidates(query_codes, index.codes, candidates)
    table = build_lookup_table(row, index.quantizer)
    scores = aqd_scores(table, index.indicators, items=shortlist)
    return _rank_candidates(scores, shortlist, top_k)


def full_aqd_query(query_feature, index: RetrievalIndex, top_k: int = 10) -> RankedResult:
    """Asymmetric quantizer similarity against every item (no hash filter)."""
    row = _query_row(query_feature, index.dim)
    if top_k > index.count:
        raise TooManyCandidates(f"asked for {top_k} of {index.count} items")
    table = build_lookup_table(row, index.quantizer)
    scores = aqd_scores(table, index.indicators)
    chosen = _top_by_score(scores, top_k)
    return RankedResult(indices=chosen, scores=scores[chosen])


def hash_only_query(query_feature, index: RetrievalIndex, top_k: int = 10) -> RankedResult:
    """Rank by ascending Hamming distance only; score is minus the distance."""
    row = _query_row(query_feature, index.dim)
    if top_k > index.count:
        raise TooManyCandidates(f"asked for {top_k} of {index.count} items")
    query_codes = sign_encode(row.reshape(1, -1))
    dists = hamming_distances(query_codes, index.codes)
    keys = (dists << np.uint64(32)) | np.arange(index.count, dtype=np.uint64)
    chosen = _smallest_by_key(keys, top_k).astype(np.int64)
    return RankedResult(indices=chosen, scores=-dists[chosen].astype(np.float64))


def lossless_query(query_feature, database_features, top_k: int = 10) -> RankedResult:
    """Cosine similarity against uncompressed features; the accuracy ceiling."""
    database = np.asarray(feature_values(database_features), dtype=np.float64)
    row = _query_row(query_feature, database.shape[1])
    if top_k > database.shape[0]:
        raise TooManyCandidates(f"asked for {top_k} of {database.shape[0]} items")
    query_norm = np.linalg.norm(row)
    if query_norm == 0:
        raise ZeroNormVector("query vector has zero norm")
    norms = np.linalg.norm(database, axis=1)
    if (norms == 0).any():
        raise ZeroNormVector(f"database row {int(np.flatnonzero(norms == 0)[0])} has zero norm")
    scores = (database @ row) / (norms * query_norm)
    chosen = _top_by_score(scores, top_k)
    return RankedResult(indices=chosen, scores=scores[chosen])


def save_index(index: RetrievalIndex, path) -> None:
    """Write the index in the HQX1 layout.

    Header (magic, version, N, n, m, k as u32 LE), then the packed hash
    words (u64 LE, row-major), the codebooks as float32 (book-major,
    column-major within each book), and the indicators as u16 LE.
    """
    header = INDEX_MAGIC + struct.pack(
        "<IIIII",
        INDEX_VERSION,
        index.count,
        index.dim,
        index.quantizer.num_books,
        index.quantizer.book_size,
    )
    words = index.codes.words.astype("<u8", copy=False).tobytes()
    # (m, n, k) -> column-major per book means writing (m, k, n) row-major
    books = index.quantizer.codebooks.transpose(0, 2, 1).astype("<f4").tobytes()
    indicator_bytes = index.indicators.indices.astype("<u2").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(words)
            fh.write(books)
            fh.write(indicator_bytes)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_index(path) -> RetrievalIndex:
    """Read an HQX1 file back; bit-exact inverse of save_index."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4:
        raise TruncatedFile(f"{path}: only {len(blob)} bytes, no room for magic")
    if blob[:4] != INDEX_MAGIC:
        raise BadMagic(f"{path}: expected {INDEX_MAGIC!r}, found {blob[:4]!r}")
    if len(blob) < 24:
        raise TruncatedFile(f"{path}: header cut short at {len(blob)} bytes")
    version, count, dim, num_books, book_size = struct.unpack("<IIIII", blob[4:24])
    if version != INDEX_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {INDEX_VERSION}")
    words_n = count * words_per_code(dim)
    books_n = num_books * book_size * dim
    expected = 24 + 8 * words_n + 4 * books_n + 2 * count * num_books
    if len(blob) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, got {len(blob)}")
    offset = 24
    words = np.frombuffer(blob, dtype="<u8", count=words_n, offset=offset)
    words = words.reshape(count, words_per_code(dim))
    offset += 8 * words_n
    books = np.frombuffer(blob, dtype="<f4", count=books_n, offset=offset)
    books = books.reshape(num_books, book_size, dim).transpose(0, 2, 1)
    offset += 4 * books_n
    indices = np.frombuffer(blob, dtype="<u2", count=count * num_books, offset=offset)
    indices = indices.reshape(count, num_books)
    return RetrievalIndex(
        codes=PackedCodes(dim=dim, words=words.astype(np.uint64)),
        quantizer=QuantizerModel(codebooks=np.ascontiguousarray(books, dtype=np.float64)),
        indicators=IndicatorSet(book_size=book_size, indices=indices.astype(np.int32)),
    )
