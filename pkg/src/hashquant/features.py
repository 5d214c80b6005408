"""Dense feature storage, multi-label ground truth, and training pairs.

Features for one modality are float32 matrices with one row per item.
Labels are 64-bit masks, one bit per label, so two items are "similar"
exactly when their masks intersect.  Training pairs combine the aligned
pairs (i, i) with one seeded re-pairing permutation whose pairs are mostly
dissimilar.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    IndexOutOfRange,
    IoFailure,
    NonFiniteValue,
    TooManyClusters,
    TruncatedFile,
)

FEATURE_MAGIC = b"DFM1"
LABEL_MAGIC = b"LBL1"
MAX_LABELS = 64


@dataclass(frozen=True)
class FeatureMatrix:
    """N x n dense feature rows for one modality, stored float32 row-major."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"feature matrix must be at least 1x1, got {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("feature matrix contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def feature_values(features) -> np.ndarray:
    """Accept a FeatureMatrix or a plain 2-D array and return the array."""
    if isinstance(features, FeatureMatrix):
        return features.values
    arr = np.asarray(features)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D feature array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class LabelSet:
    """Per-item 64-bit label masks over a vocabulary of num_labels bits."""

    num_labels: int
    masks: np.ndarray

    def __post_init__(self):
        masks = np.ascontiguousarray(self.masks, dtype=np.uint64)
        if masks.ndim != 1 or masks.shape[0] < 1:
            raise ValueError(f"masks must be a non-empty 1-D array, got shape {masks.shape}")
        if not 1 <= self.num_labels <= MAX_LABELS:
            raise ValueError(f"num_labels must be in [1, {MAX_LABELS}], got {self.num_labels}")
        if (masks == 0).any():
            raise ValueError("every item needs at least one label bit set")
        if self.num_labels < MAX_LABELS:
            high = masks >> np.uint64(self.num_labels)
            if high.any():
                raise ValueError(f"mask bit set at or above position {self.num_labels}")
        masks.setflags(write=False)
        object.__setattr__(self, "masks", masks)

    @property
    def count(self) -> int:
        return self.masks.shape[0]


@dataclass(frozen=True)
class PairBatch:
    """Cross-modal training pairs: (index into A, index into B, similar flag)."""

    index_a: np.ndarray
    index_b: np.ndarray
    similar: np.ndarray

    def __post_init__(self):
        index_a = np.ascontiguousarray(self.index_a, dtype=np.int64)
        index_b = np.ascontiguousarray(self.index_b, dtype=np.int64)
        similar = np.ascontiguousarray(self.similar, dtype=np.int8)
        if not (index_a.shape == index_b.shape == similar.shape) or index_a.ndim != 1:
            raise ValueError("pair arrays must be 1-D and equal length")
        if not np.isin(similar, (0, 1)).all():
            raise ValueError("similarity labels must be 0 or 1")
        for arr in (index_a, index_b, similar):
            arr.setflags(write=False)
        object.__setattr__(self, "index_a", index_a)
        object.__setattr__(self, "index_b", index_b)
        object.__setattr__(self, "similar", similar)

    def __len__(self) -> int:
        return self.index_a.shape[0]


def save_features(matrix: FeatureMatrix, path) -> None:
    """Write a feature matrix in the DFM1 layout (header + float32 LE payload)."""
    if not isinstance(matrix, FeatureMatrix):
        matrix = FeatureMatrix(np.asarray(matrix))
    header = FEATURE_MAGIC + struct.pack("<II", matrix.count, matrix.dim)
    payload = matrix.values.astype("<f4", copy=False).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_features(path) -> FeatureMatrix:
    """Read a DFM1 file back into a FeatureMatrix, bit-exact."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4:
        raise TruncatedFile(f"{path}: only {len(blob)} bytes, no room for magic")
    if blob[:4] != FEATURE_MAGIC:
        raise BadMagic(f"{path}: expected {FEATURE_MAGIC!r}, found {blob[:4]!r}")
    if len(blob) < 12:
        raise TruncatedFile(f"{path}: header cut short at {len(blob)} bytes")
    count, dim = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * count * dim
    if len(blob) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes for {count}x{dim}, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=12)
    values = values.reshape(count, dim)
    if not np.isfinite(values).all():
        raise NonFiniteValue(f"{path}: payload contains NaN or infinity")
    return FeatureMatrix(values)


def save_labels(labels: LabelSet, path) -> None:
    """Write a label set in the LBL1 layout (header + uint64 LE masks)."""
    header = LABEL_MAGIC + struct.pack("<II", labels.count, labels.num_labels)
    payload = labels.masks.astype("<u8", copy=False).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_labels(path) -> LabelSet:
    """Read an LBL1 file back into a LabelSet."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4:
        raise TruncatedFile(f"{path}: only {len(blob)} bytes, no room for magic")
    if blob[:4] != LABEL_MAGIC:
        raise BadMagic(f"{path}: expected {LABEL_MAGIC!r}, found {blob[:4]!r}")
    if len(blob) < 12:
        raise TruncatedFile(f"{path}: header cut short at {len(blob)} bytes")
    count, num_labels = struct.unpack("<II", blob[4:12])
    expected = 12 + 8 * count
    if len(blob) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes for {count} masks, got {len(blob)}")
    masks = np.frombuffer(blob, dtype="<u8", count=count, offset=12)
    return LabelSet(num_labels=num_labels, masks=masks)


def pair_labels(labels_a: LabelSet, labels_b: LabelSet, i: int, j: int) -> int:
    """1 when items i (modality A) and j (modality B) share any label, else 0."""
    if not 0 <= i < labels_a.count:
        raise IndexOutOfRange(f"index {i} outside [0, {labels_a.count})")
    if not 0 <= j < labels_b.count:
        raise IndexOutOfRange(f"index {j} outside [0, {labels_b.count})")
    return int(bool(labels_a.masks[i] & labels_b.masks[j]))


def _similarity_row(labels_a: LabelSet, labels_b: LabelSet, idx_a, idx_b) -> np.ndarray:
    return ((labels_a.masks[idx_a] & labels_b.masks[idx_b]) != 0).astype(np.int8)


MAX_SHUFFLE_ATTEMPTS = 16


def generate_pairs(
    labels_a: LabelSet,
    labels_b: LabelSet,
    shuffle_seed: int,
    target_negative_fraction: float = 0.9,
) -> PairBatch:
    """Build the aligned pairs (i, i) plus one seeded re-pairing permutation.

    The permutation is re-drawn (up to 16 attempts) until the fraction of
    dissimilar pairs among the re-paired half lies within 10 percentage
    points of the target; if no draw qualifies, the closest draw is kept.

    Args:
        labels_a: Labels for modality A (query side of each pair).
        labels_b: Labels for modality B; must have the same item count.
        shuffle_seed: Seed for the permutation draws; output is deterministic.
        target_negative_fraction: Desired dissimilar share of re-paired pairs.

    Returns:
        A PairBatch of 2N pairs: N aligned followed by N re-paired.
    """
    if labels_a.count != labels_b.count:
        raise CountMismatch(f"label sets disagree on count: {labels_a.count} vs {labels_b.count}")
    n_items = labels_a.count
    rng = np.random.default_rng(shuffle_seed)
    aligned = np.arange(n_items)

    best_perm = None
    best_gap = np.inf
    for _ in range(MAX_SHUFFLE_ATTEMPTS):
        perm = rng.permutation(n_items)
        neg_fraction = 1.0 - _similarity_row(labels_a, labels_b, aligned, perm).mean()
        gap = abs(neg_fraction - target_negative_fraction)
        if gap < best_gap:
            best_perm, best_gap = perm, gap
        if gap <= 0.10:
            break

    index_a = np.concatenate([aligned, aligned])
    index_b = np.concatenate([aligned, best_perm])
    similar = _similarity_row(labels_a, labels_b, index_a, index_b)
    return PairBatch(index_a=index_a, index_b=index_b, similar=similar)


def synth_dataset(
    clusters: int,
    per_cluster: int,
    dim: int,
    noise_sigma: float,
    seed: int,
) -> tuple[FeatureMatrix, FeatureMatrix, LabelSet]:
    """Generate an aligned two-modality Gaussian-cluster dataset.

    Each item belongs to exactly one cluster; its modality-A and modality-B
    rows are two independent perturbations of the same cluster centroid, so
    cross-modal similarity ground truth is exactly "same cluster".

    Args:
        clusters: Number of clusters; one label bit each, so at most 64.
        per_cluster: Items per cluster in each modality.
        dim: Feature dimension.
        noise_sigma: Stddev of the isotropic per-item noise (0 collapses
            both modalities onto the centroids).
        seed: Seed making the whole dataset byte-deterministic.

    Returns:
        (features_a, features_b, labels); labels are shared by both sides.
    """
    if clusters > MAX_LABELS:
        raise TooManyClusters(f"{clusters} clusters will not fit in a {MAX_LABELS}-bit mask")
    if clusters < 1 or per_cluster < 1 or dim < 1:
        raise ValueError("clusters, per_cluster, and dim must all be positive")
    rng = np.random.default_rng(seed)
    centroids = rng.standard_normal((clusters, dim))
    cluster_of = np.repeat(np.arange(clusters), per_cluster)
    n_items = clusters * per_cluster
    noise_a = rng.standard_normal((n_items, dim))
    noise_b = rng.standard_normal((n_items, dim))
    base = centroids[cluster_of]
    features_a = FeatureMatrix(base + noise_sigma * noise_a)
    features_b = FeatureMatrix(base + noise_sigma * noise_b)
    masks = (np.uint64(1) << cluster_of.astype(np.uint64))
    labels = LabelSet(num_labels=clusters, masks=masks)
    return features_a, features_b, labels
