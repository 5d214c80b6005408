"""Shallow per-modality encoders trained with the four-term joint loss.

Each encoder is one or two affine layers with tanh after every layer, so
outputs live in (-1, 1) and double as relaxed binary codes.  The loss over
a pair batch combines a cross-entropy similarity term on feature inner
products with penalties pulling outputs toward {-1, +1} (hash), toward a
zero component sum (balance), and toward their quantizer reconstruction
(quantization).  Gradients are analytic; the sign target and the quantizer
indicators are held fixed within each step, and codebooks plus indicators
refresh at epoch boundaries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.special

from .errors import BadMagic, DimMismatch, IoFailure, TruncatedFile, VersionMismatch
from .features import PairBatch, feature_values
from .quantizer import (
    IndicatorSet,
    QuantizerModel,
    assign_indicators,
    learn_quantizer,
    reconstruct,
    update_codebooks,
)

MODEL_MAGIC = b"HQM1"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the four loss terms; all must be non-negative."""

    lambda_sim: float = 50.0
    lambda_h: float = 0.01
    lambda_b: float = 0.01
    lambda_q: float = 0.0001

    def __post_init__(self):
        for name in ("lambda_sim", "lambda_h", "lambda_b", "lambda_q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 2e-4
    alternations: int = 1
    seed: int = 0
    depth: int = 1
    num_books: int = 4
    book_size: int = 256
    assign_rounds: int = 3

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.depth not in (1, 2):
            raise ValueError("encoder depth must be 1 or 2")


@dataclass(frozen=True)
class EncoderParams:
    """Affine + tanh stack for one modality; weights are (d_in, d_out)."""

    modality: str
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        frozen = []
        for weight, bias in self.layers:
            weight = np.ascontiguousarray(weight, dtype=np.float64)
            bias = np.ascontiguousarray(bias, dtype=np.float64)
            if weight.ndim != 2 or bias.ndim != 1 or weight.shape[1] != bias.shape[0]:
                raise ValueError("each layer needs a (d_in, d_out) weight and (d_out,) bias")
            if not (np.isfinite(weight).all() and np.isfinite(bias).all()):
                raise ValueError("encoder parameters must be finite")
            weight.setflags(write=False)
            bias.setflags(write=False)
            frozen.append((weight, bias))
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]


def init_encoder(dim: int, depth: int, seed: int, modality: str = "") -> EncoderParams:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(depth):
        limit = 1.0 / np.sqrt(dim)
        weight = rng.uniform(-limit, limit, size=(dim, dim))
        bias = rng.uniform(-limit, limit, size=dim)
        layers.append((weight, bias))
    return EncoderParams(modality=modality, layers=tuple(layers))


def encoder_forward(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    """tanh(W x + c) per layer; accepts one row or a batch of rows."""
    out = np.asarray(x, dtype=np.float64)
    if out.shape[-1] != params.input_dim:
        raise DimMismatch(f"input has dim {out.shape[-1]}, encoder expects {params.input_dim}")
    for weight, bias in params.layers:
        out = np.tanh(out @ weight + bias)
    return out


def _forward_cached(params: EncoderParams, x: np.ndarray) -> list[np.ndarray]:
    """Activations per layer (input first), for backprop through tanh chains."""
    acts = [np.asarray(x, dtype=np.float64)]
    for weight, bias in params.layers:
        acts.append(np.tanh(acts[-1] @ weight + bias))
    return acts


def _backprop(params: EncoderParams, acts: list[np.ndarray], d_out: np.ndarray):
    """Gradients of a loss wrt all layer params given d(loss)/d(output)."""
    grads = [None] * params.depth
    delta = d_out
    for layer in range(params.depth - 1, -1, -1):
        pre_grad = delta * (1.0 - acts[layer + 1] ** 2)  # through tanh
        grads[layer] = (acts[layer].T @ pre_grad, pre_grad.sum(axis=0))
        if layer:
            delta = pre_grad @ params.layers[layer][0].T
    return grads


def _softplus(z: np.ndarray) -> np.ndarray:
    """log(1 + e^z) without overflow for large |z|."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sign(values: np.ndarray) -> np.ndarray:
    return np.where(values >= 0, 1.0, -1.0)


def sim_loss(f_i: np.ndarray, f_j: np.ndarray, s_ij: int) -> float:
    """Cross-entropy on the inner product: softplus(<f_i, f_j>) - s * <f_i, f_j>."""
    f_i = np.asarray(f_i, dtype=np.float64).reshape(-1)
    f_j = np.asarray(f_j, dtype=np.float64).reshape(-1)
    if f_i.shape != f_j.shape:
        raise DimMismatch(f"rows have dims {f_i.shape[0]} and {f_j.shape[0]}")
    z = float(f_i @ f_j)
    return float(_softplus(z) - s_ij * z)


def hash_loss(f: np.ndarray) -> float:
    """Squared distance from the row to its own sign pattern."""
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    diff = f - _sign(f)
    return float(diff @ diff)


def balance_loss(f: np.ndarray) -> float:
    """Squared component sum; zero when +1s and -1s are used evenly."""
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    return float(f.sum() ** 2)


def quant_loss_term(f: np.ndarray, model: QuantizerModel, indices) -> float:
    """Squared reconstruction residual for one row under fixed indicators."""
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if f.shape[0] != model.dim:
        raise DimMismatch(f"row has dim {f.shape[0]}, model has dim {model.dim}")
    approx = reconstruct(model, np.asarray(indices, dtype=np.int64).reshape(1, -1))[0]
    diff = f - approx
    return float(diff @ diff)


def _batch_terms(
    batch: PairBatch,
    features_a,
    features_b,
    encoder_a: EncoderParams,
    encoder_b: EncoderParams,
    quantizer: QuantizerModel | None,
    indicators_a: IndicatorSet | None,
    indicators_b: IndicatorSet | None,
):
    """Forward the batch once and return everything the loss and grads need."""
    values_a = np.asarray(feature_values(features_a), dtype=np.float64)
    values_b = np.asarray(feature_values(features_b), dtype=np.float64)
    acts_a = _forward_cached(encoder_a, values_a[batch.index_a])
    acts_b = _forward_cached(encoder_b, values_b[batch.index_b])
    f_a, f_b = acts_a[-1], acts_b[-1]
    z = (f_a * f_b).sum(axis=1)
    recon_a = recon_b = None
    if quantizer is not None and indicators_a is not None and indicators_b is not None:
        recon_a = reconstruct(quantizer, indicators_a.indices[batch.index_a])
        recon_b = reconstruct(quantizer, indicators_b.indices[batch.index_b])
    return acts_a, acts_b, f_a, f_b, z, recon_a, recon_b


def total_loss(
    batch: PairBatch,
    features_a,
    features_b,
    encoder_a: EncoderParams,
    encoder_b: EncoderParams,
    weights: LossWeights,
    quantizer: QuantizerModel | None = None,
    indicators_a: IndicatorSet | None = None,
    indicators_b: IndicatorSet | None = None,
) -> float:
    """Weighted sum of all four terms over the batch (both modalities)."""
    _, _, f_a, f_b, z, recon_a, recon_b = _batch_terms(
        batch, features_a, features_b, encoder_a, encoder_b, quantizer, indicators_a, indicators_b
    )
    s = batch.similar.astype(np.float64)
    loss = weights.lambda_sim * float((_softplus(z) - s * z).sum())
    if weights.lambda_h:
        loss += weights.lambda_h * float(
            ((f_a - _sign(f_a)) ** 2).sum() + ((f_b - _sign(f_b)) ** 2).sum()
        )
    if weights.lambda_b:
        loss += weights.lambda_b * float(
            (f_a.sum(axis=1) ** 2).sum() + (f_b.sum(axis=1) ** 2).sum()
        )
    if weights.lambda_q:
        if recon_a is None:
            raise ValueError("lambda_q > 0 requires a quantizer and indicators")
        loss += weights.lambda_q * float(
            ((f_a - recon_a) ** 2).sum() + ((f_b - recon_b) ** 2).sum()
        )
    return loss


def loss_gradients(
    batch: PairBatch,
    features_a,
    features_b,
    encoder_a: EncoderParams,
    encoder_b: EncoderParams,
    weights: LossWeights,
    quantizer: QuantizerModel | None = None,
    indicators_a: IndicatorSet | None = None,
    indicators_b: IndicatorSet | None = None,
):
    """Analytic gradients of total_loss wrt every parameter of both encoders.

    The sign targets and quantizer indicators are constants of the step, so
    d/df of the hash term is 2(f - sign(f)) and of the quantization term is
    2(f - reconstruction); the similarity term contributes
    (sigmoid(z) - s) * f_other per pair.
    """
    acts_a, acts_b, f_a, f_b, z, recon_a, recon_b = _batch_terms(
        batch, features_a, features_b, encoder_a, encoder_b, quantizer, indicators_a, indicators_b
    )
    s = batch.similar.astype(np.float64)
    sig = scipy.special.expit(z)
    d_fa = weights.lambda_sim * (sig - s)[:, None] * f_b
    d_fb = weights.lambda_sim * (sig - s)[:, None] * f_a
    if weights.lambda_h:
        d_fa += weights.lambda_h * 2.0 * (f_a - _sign(f_a))
        d_fb += weights.lambda_h * 2.0 * (f_b - _sign(f_b))
    if weights.lambda_b:
        d_fa += weights.lambda_b * 2.0 * f_a.sum(axis=1, keepdims=True)
        d_fb += weights.lambda_b * 2.0 * f_b.sum(axis=1, keepdims=True)
    if weights.lambda_q:
        if recon_a is None:
            raise ValueError("lambda_q > 0 requires a quantizer and indicators")
        d_fa += weights.lambda_q * 2.0 * (f_a - recon_a)
        d_fb += weights.lambda_q * 2.0 * (f_b - recon_b)
    return _backprop(encoder_a, acts_a, d_fa), _backprop(encoder_b, acts_b, d_fb)


def _apply_step(params: EncoderParams, grads, scale: float) -> EncoderParams:
    layers = tuple(
        (weight - scale * g_w, bias - scale * g_b)
        for (weight, bias), (g_w, g_b) in zip(params.layers, grads)
    )
    return EncoderParams(modality=params.modality, layers=layers)


@dataclass(frozen=True)
class TrainResult:
    encoder_a: EncoderParams
    encoder_b: EncoderParams
    quantizer: QuantizerModel
    indicators_a: IndicatorSet
    indicators_b: IndicatorSet
    losses: tuple[float, ...]


def train(
    features_a,
    features_b,
    pairs: PairBatch,
    config: TrainConfig,
    weights: LossWeights,
) -> TrainResult:
    """Minibatch SGD on both encoders, alternated with quantizer refreshes.

    Each epoch shuffles the pair list, applies batch-mean gradient steps, then
    re-encodes the full training set and runs `config.alternations` rounds of
    codebook update plus indicator reassignment.  Everything is seeded, so a
    rerun with the same inputs is bitwise identical.  The returned losses are
    the full-batch loss before training and after each epoch.
    """
    values_a = np.asarray(feature_values(features_a), dtype=np.float64)
    values_b = np.asarray(feature_values(features_b), dtype=np.float64)
    if values_a.shape[1] != values_b.shape[1]:
        raise DimMismatch("modalities disagree on feature dimension")
    if len(pairs) == 0:
        raise ValueError("empty pair batch")
    if pairs.index_a.max() >= values_a.shape[0] or pairs.index_b.max() >= values_b.shape[0]:
        raise ValueError("pair indices exceed feature counts")

    seed_rng = np.random.default_rng(config.seed)
    seeds = seed_rng.integers(0, 2**63 - 1, size=4)
    encoder_a = init_encoder(values_a.shape[1], config.depth, int(seeds[0]), modality="a")
    encoder_b = init_encoder(values_b.shape[1], config.depth, int(seeds[1]), modality="b")
    shuffle_rng = np.random.default_rng(int(seeds[2]))

    encoded_a = encoder_forward(encoder_a, values_a)
    encoded_b = encoder_forward(encoder_b, values_b)
    fit = learn_quantizer(
        encoded_a,
        encoded_b,
        num_books=config.num_books,
        book_size=config.book_size,
        alternations=config.alternations,
        seed=int(seeds[3]),
        assign_rounds=config.assign_rounds,
    )
    quantizer, indicators_a, indicators_b = fit.model, fit.indicators_a, fit.indicators_b

    def full_loss() -> float:
        return total_loss(
            pairs, values_a, values_b, encoder_a, encoder_b, weights,
            quantizer, indicators_a, indicators_b,
        )

    losses = [full_loss()]
    n_pairs = len(pairs)
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n_pairs)
        for start in range(0, n_pairs, config.batch_size):
            chosen = order[start : start + config.batch_size]
            minibatch = PairBatch(
                index_a=pairs.index_a[chosen],
                index_b=pairs.index_b[chosen],
                similar=pairs.similar[chosen],
            )
            grads_a, grads_b = loss_gradients(
                minibatch, values_a, values_b, encoder_a, encoder_b, weights,
                quantizer, indicators_a, indicators_b,
            )
            scale = config.learning_rate / len(minibatch)
            encoder_a = _apply_step(encoder_a, grads_a, scale)
            encoder_b = _apply_step(encoder_b, grads_b, scale)

        encoded_a = encoder_forward(encoder_a, values_a)
        encoded_b = encoder_forward(encoder_b, values_b)
        for _ in range(config.alternations):
            quantizer = update_codebooks(encoded_a, indicators_a, encoded_b, indicators_b)
            new_a = assign_indicators(encoded_a, quantizer, indicators_a, config.assign_rounds)
            new_b = assign_indicators(encoded_b, quantizer, indicators_b, config.assign_rounds)
            unchanged = (new_a.indices == indicators_a.indices).all() and (
                new_b.indices == indicators_b.indices
            ).all()
            indicators_a, indicators_b = new_a, new_b
            if unchanged:
                break
        losses.append(full_loss())

    return TrainResult(
        encoder_a=encoder_a,
        encoder_b=encoder_b,
        quantizer=quantizer,
        indicators_a=indicators_a,
        indicators_b=indicators_b,
        losses=tuple(losses),
    )


def _pack_array(arr: np.ndarray) -> bytes:
    return arr.astype("<f8", copy=False).tobytes()


def save_model(path, encoder_a: EncoderParams, encoder_b: EncoderParams, quantizer: QuantizerModel) -> None:
    """Persist both encoders and the quantizer codebooks (HQM1 layout)."""
    if encoder_a.depth != encoder_b.depth or encoder_a.input_dim != encoder_b.input_dim:
        raise DimMismatch("encoders disagree on depth or dimension")
    dim, depth = encoder_a.input_dim, encoder_a.depth
    parts = [
        MODEL_MAGIC,
        struct.pack("<IIIII", MODEL_VERSION, dim, depth, quantizer.num_books, quantizer.book_size),
    ]
    for encoder in (encoder_a, encoder_b):
        for weight, bias in encoder.layers:
            parts.append(_pack_array(weight))
            parts.append(_pack_array(bias))
    parts.append(_pack_array(quantizer.codebooks))
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_model(path) -> tuple[EncoderParams, EncoderParams, QuantizerModel]:
    """Read an HQM1 model file back; inverse of save_model."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4:
        raise TruncatedFile(f"{path}: only {len(blob)} bytes, no room for magic")
    if blob[:4] != MODEL_MAGIC:
        raise BadMagic(f"{path}: expected {MODEL_MAGIC!r}, found {blob[:4]!r}")
    if len(blob) < 24:
        raise TruncatedFile(f"{path}: header cut short at {len(blob)} bytes")
    version, dim, depth, num_books, book_size = struct.unpack("<IIIII", blob[4:24])
    if version != MODEL_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {MODEL_VERSION}")
    offset = 24

    def take(count: int) -> np.ndarray:
        nonlocal offset
        nbytes = 8 * count
        if len(blob) < offset + nbytes:
            raise TruncatedFile(f"{path}: payload cut short at {len(blob)} bytes")
        out = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += nbytes
        return out.astype(np.float64)

    encoders = []
    for modality in ("a", "b"):
        layers = []
        for _ in range(depth):
            weight = take(dim * dim).reshape(dim, dim)
            bias = take(dim)
            layers.append((weight, bias))
        encoders.append(EncoderParams(modality=modality, layers=tuple(layers)))
    books = take(num_books * dim * book_size).reshape(num_books, dim, book_size)
    return encoders[0], encoders[1], QuantizerModel(codebooks=books)
