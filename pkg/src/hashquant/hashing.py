"""Sign-based binary codes, bit packing, and Hamming-distance search.

Codes live in {-1, +1}^n but are stored packed: bit d of an item's code is
1 exactly when component d is +1, with sign(x) = +1 for x >= 0.  Bit d sits
in word d // 64 at position d % 64, and padding bits above n are zero, so
distances reduce to XOR plus population count over whole words.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, TooManyCandidates
from .features import feature_values

WORD_BITS = 64


def words_per_code(dim: int) -> int:
    return -(-dim // WORD_BITS)


@dataclass(frozen=True)
class PackedCodes:
    """N packed sign codes of dim bits each, one uint64 row per item."""

    dim: int
    words: np.ndarray

    def __post_init__(self):
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.ndim != 2:
            raise ValueError(f"packed words must be 2-D, got shape {words.shape}")
        if self.dim < 1:
            raise ValueError(f"code dimension must be positive, got {self.dim}")
        if words.shape[1] != words_per_code(self.dim):
            raise ValueError(
                f"dim {self.dim} needs {words_per_code(self.dim)} words per code, "
                f"got {words.shape[1]}"
            )
        pad_bits = words.shape[1] * WORD_BITS - self.dim
        if pad_bits and words.shape[0]:
            if (words[:, -1] >> np.uint64(WORD_BITS - pad_bits)).any():
                raise ValueError("padding bits above dim must be zero")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @property
    def count(self) -> int:
        return self.words.shape[0]


def sign_encode(features) -> PackedCodes:
    """Pack the sign pattern of each feature row, with sign(0) = +1."""
    values = feature_values(features)
    n_items, dim = values.shape
    bits = (values >= 0).astype(np.uint8)
    packed = np.packbits(bits, axis=1, bitorder="little")
    n_bytes = words_per_code(dim) * (WORD_BITS // 8)
    if packed.shape[1] < n_bytes:
        pad = np.zeros((n_items, n_bytes - packed.shape[1]), dtype=np.uint8)
        packed = np.hstack([packed, pad])
    words = packed.view("<u8").astype(np.uint64, copy=False)
    return PackedCodes(dim=dim, words=words)


def unpack_signs(codes: PackedCodes) -> np.ndarray:
    """Expand packed codes back to a float {-1, +1} matrix of shape (N, dim)."""
    as_bytes = codes.words.astype("<u8", copy=False).view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")[:, : codes.dim]
    return bits.astype(np.float64) * 2.0 - 1.0


def hamming_distance(codes_x: PackedCodes, codes_y: PackedCodes, i: int = 0, j: int = 0) -> int:
    """Number of differing bit positions between code i of x and code j of y."""
    if codes_x.dim != codes_y.dim:
        raise DimMismatch(f"code dims differ: {codes_x.dim} vs {codes_y.dim}")
    diff = codes_x.words[i] ^ codes_y.words[j]
    return int(np.bitwise_count(diff).sum())


def hamming_distances(query: PackedCodes, database: PackedCodes) -> np.ndarray:
    """Hamming distance from a single query code to every database code.

    One pass per word column keeps each pass contiguous and cheap; this is
    the full-scan first stage, so it must stay close to memory bandwidth.
    """
    if query.dim != database.dim:
        raise DimMismatch(f"code dims differ: {query.dim} vs {database.dim}")
    if query.count != 1:
        raise ValueError(f"expected exactly one query code, got {query.count}")
    words = database.words
    q = query.words[0]
    dists = np.bitwise_count(words[:, 0] ^ q[0]).astype(np.uint64)
    for col in range(1, words.shape[1]):
        dists += np.bitwise_count(words[:, col] ^ q[col])
    return dists


def _smallest_by_key(keys: np.ndarray, count: int) -> np.ndarray:
    """Positions of the `count` smallest keys, in ascending key order."""
    if count >= keys.shape[0]:
        return np.argsort(keys)
    picked = np.argpartition(keys, count - 1)[:count]
    return picked[np.argsort(keys[picked])]


def hamming_top_candidates(query: PackedCodes, database: PackedCodes, candidates: int) -> np.ndarray:
    """Indices of the `candidates` codes closest to the query.

    Selection is exact: ties in distance break by ascending item index, and
    the output is ordered by (distance, index).  Uses partial selection on a
    composite (distance, index) key rather than a full sort.
    """
    if candidates > database.count:
        raise TooManyCandidates(f"asked for {candidates} of {database.count} items")
    if candidates < 0:
        raise ValueError("candidate count must be non-negative")
    if candidates == 0:
        return np.empty(0, dtype=np.int64)
    dists = hamming_distances(query, database)
    # distance < 2**32 and count < 2**32, so (distance, index) packs into one u64
    keys = (dists << np.uint64(32)) | np.arange(database.count, dtype=np.uint64)
    picked = _smallest_by_key(keys, candidates)
    return picked.astype(np.int64)
