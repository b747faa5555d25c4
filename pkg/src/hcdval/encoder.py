"""Linear contrastive encoder trained with finite-difference gradients.

The encoder is a single matrix W mapping raw features (dimension D) to an
embedding space (dimension d). Training ascends a per-batch objective

    J(W; batch) = utility(batch) + lambda * dispersion(batch) - alpha * penalty(batch)

where utility fits a nearest-centroid classifier on the batch embeddings and
scores accuracy on a fixed validation subsample, dispersion is the mean
cosine distance between cross-label pairs of batch embeddings, and the
penalty discourages embeddings that amplify small input perturbations.
Gradients are central finite differences over the entries of W — the model is
deliberately tiny (D * d is capped), so derivative-free training keeps the
whole pipeline dependency-light and exactly reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import LabeledDataset, PointSet, RngStream, content_token, read_matrix_binary, write_matrix_binary
from .utility import normalized_dispersion, D_MAX

EMBED_SOURCES = ("precomputed", "identity", "trained_linear")
MAX_PARAMS = 4096
VAL_SUBSAMPLE = 256


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Embedding rows aligned with the train split.

    :param vectors: (n, d) float64 embedding rows
    :param source: "precomputed" | "identity" | "trained_linear"
    :param transform: the trained (d, D) matrix when source is trained_linear,
        kept so streaming ingest can embed new raw rows
    :param training_trace: per-epoch averaged objective values (diagnostics)
    """

    vectors: np.ndarray
    source: str
    transform: Optional[np.ndarray] = None
    training_trace: Optional[tuple] = None

    def __post_init__(self):
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float64)
        object.__setattr__(self, "vectors", vecs)
        if vecs.ndim != 2:
            raise ValueError("embedding vectors must be 2-d")
        if not np.isfinite(vecs).all():
            raise ValueError("embedding vectors must be finite")
        if self.source not in EMBED_SOURCES:
            raise ValueError(f"unknown embedding source {self.source!r}")

    @property
    def d(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def n(self) -> int:
        return int(self.vectors.shape[0])


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 4
    lam: float = 0.5
    alpha: float = 0.1
    epochs: int = 5
    batch_size: int = 32
    partners_per_anchor: int = 2
    fd_step: float = 0.05
    fd_draws: int = 1
    lr: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.epochs < 0 or self.batch_size < 2:
            raise ValueError("need d >= 1, epochs >= 0, batch_size >= 2")
        if self.partners_per_anchor < 1 or self.fd_draws < 1:
            raise ValueError("need at least one partner per anchor and one draw")
        if self.fd_step <= 0 or self.lr <= 0:
            raise ValueError("fd_step and lr must be positive")
        if self.lam < 0 or self.alpha < 0:
            raise ValueError("lam and alpha must be non-negative")


def identity_embeddings(data: LabeledDataset) -> EmbeddingMatrix:
    return EmbeddingMatrix(vectors=data.features.copy(), source="identity")


def save_embeddings(path, emb: EmbeddingMatrix) -> None:
    write_matrix_binary(path, emb.vectors)


def load_embeddings(path, expected_n: Optional[int] = None) -> EmbeddingMatrix:
    vectors = read_matrix_binary(path, with_labels=False)
    if expected_n is not None and vectors.shape[0] != expected_n:
        raise ValueError(f"{path}: embedding has {vectors.shape[0]} rows, dataset has {expected_n}")
    return EmbeddingMatrix(vectors=vectors, source="precomputed")


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return D_MAX
    return float(1.0 - (a @ b) / (na * nb))


def _feature_bounds(data: LabeledDataset):
    low = data.feature_low if data.feature_low is not None else data.features.min(axis=0)
    high = data.feature_high if data.feature_high is not None else data.features.max(axis=0)
    return low, high


def _sample_pairs(labels: np.ndarray, idx: np.ndarray, partners: int, gen: np.random.Generator):
    """For each anchor, up to ``partners`` cross-label partners from the batch."""
    pairs = []
    y = labels[idx]
    for a_local, a in enumerate(idx):
        cands = np.flatnonzero(y != y[a_local])
        if cands.size == 0:
            continue
        take = min(partners, cands.size)
        chosen = gen.choice(cands, size=take, replace=False)
        for c in np.sort(chosen):
            pairs.append((int(a), int(idx[c])))
    return pairs


def smoothness_penalty(
    data: LabeledDataset,
    batch: PointSet,
    W: np.ndarray,
    cfg: EncoderConfig,
    pairs: Optional[Sequence[tuple]] = None,
    directions: Optional[np.ndarray] = None,
) -> float:
    """Finite-difference smoothness penalty of the encoder on one batch.

    For sampled cross-label pairs (p, q) and unit directions r, measures how
    much a small input perturbation of the anchor moves the embedded pair
    distance:

        penalty = mean over pairs, mean over draws of (delta / fd_step)^2
        delta = dist(f(clip(x_p + fd_step * r)), f(x_q)) - dist(f(x_p), f(x_q))

    Perturbed inputs are clipped to the train-split feature range. Batches
    with no cross-label pair give 0. Passing explicit ``pairs`` and
    ``directions`` freezes the sampling (used by the trainer so the penalty is
    a deterministic function of W inside one gradient step).
    """
    W = np.asarray(W, dtype=np.float64)
    idx = batch.indices
    if pairs is None:
        gen = RngStream(cfg.seed, "fd-pairs", content_token(idx)).generator()
        pairs = _sample_pairs(data.labels, idx, cfg.partners_per_anchor, gen)
        directions = None
    if not pairs:
        return 0.0
    if directions is None:
        gen = RngStream(cfg.seed, "fd-directions", content_token(idx)).generator()
        directions = gen.standard_normal((len(pairs), cfg.fd_draws, data.dim))
    directions = np.asarray(directions, dtype=np.float64)
    norms = np.linalg.norm(directions, axis=2, keepdims=True)
    norms[norms == 0.0] = 1.0
    directions = directions / norms
    low, high = _feature_bounds(data)
    eps = cfg.fd_step
    total = 0.0
    for (p, q), dirs in zip(pairs, directions):
        x_p, x_q = data.features[p], data.features[q]
        z_p, z_q = W @ x_p, W @ x_q
        base = _cosine_distance(z_p, z_q)
        acc = 0.0
        for r in dirs:
            x_shift = np.clip(x_p + eps * r, low, high)
            acc += ((_cosine_distance(W @ x_shift, z_q) - base) / eps) ** 2
        total += acc / dirs.shape[0]
    return total / len(pairs)


def _batch_objective(data, idx, W, cfg, val_X, val_y, pairs, directions) -> float:
    Z = data.features[idx] @ W.T
    y = data.labels[idx]
    # nearest-centroid accuracy of the embedded batch on the embedded subsample
    classes = np.unique(y)
    if classes.size >= 2:
        centroids = np.stack([Z[y == c].mean(axis=0) for c in classes])
        vz = val_X @ W.T
        d2 = ((vz[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        pred = classes[np.argmin(d2, axis=1)]
        utility = float(np.mean(pred == val_y))
    else:
        utility = 1.0 / data.num_classes
    disp = normalized_dispersion(Z, y, PointSet._from_sorted(np.arange(len(idx), dtype=np.int64))).value
    penalty = smoothness_penalty(data, PointSet._from_sorted(np.sort(idx)), W, cfg, pairs=pairs, directions=directions)
    return utility + cfg.lam * disp - cfg.alpha * penalty


def fd_gradient(fn, W: np.ndarray, rel_step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function over a parameter matrix."""
    W = np.asarray(W, dtype=np.float64)
    grad = np.zeros_like(W)
    flat = W.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        h = rel_step * (1.0 + abs(flat[k]))
        orig = flat[k]
        flat[k] = orig + h
        up = fn(W)
        flat[k] = orig - h
        down = fn(W)
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * h)
    return grad


def _epoch_batches(n: int, batch_size: int, gen: np.random.Generator):
    order = gen.permutation(n)
    batches = []
    for start in range(0, n, batch_size):
        chunk = order[start : start + batch_size]
        if chunk.size >= 2:
            batches.append(np.sort(chunk))
    return batches


def train_linear_encoder(data: LabeledDataset, cfg: EncoderConfig) -> EmbeddingMatrix:
    """Train the linear encoder and embed the train split.

    The seeded Gaussian init W ~ N(0, 1/D) is returned unchanged when
    epochs=0. Each epoch ascends the batch objective with central
    finite-difference gradients; afterwards every epoch-end snapshot (and the
    init) is scored on one fixed batch partition and the best one wins, so the
    returned encoder's averaged objective never falls below the init's.
    """
    D = data.dim
    if cfg.d * D > MAX_PARAMS:
        raise ValueError(f"encoder size d*D = {cfg.d * D} exceeds the {MAX_PARAMS}-parameter cap")
    init_gen = RngStream(cfg.seed, "encoder-init").generator()
    W = init_gen.standard_normal((cfg.d, D)) / np.sqrt(D)

    val_gen = RngStream(cfg.seed, "encoder-val").generator()
    n_val = data.val_features.shape[0]
    take = min(VAL_SUBSAMPLE, n_val)
    val_idx = np.sort(val_gen.choice(n_val, size=take, replace=False))
    val_X, val_y = data.val_features[val_idx], data.val_labels[val_idx]

    def frozen_batch_inputs(epoch: int):
        gen = RngStream(cfg.seed, "encoder-batches", b"", epoch).generator()
        batches = _epoch_batches(data.n, cfg.batch_size, gen)
        frozen = []
        for b, idx in enumerate(batches):
            pg = RngStream(cfg.seed, "encoder-pairs", content_token(epoch, b)).generator()
            pairs = _sample_pairs(data.labels, idx, cfg.partners_per_anchor, pg)
            dirs = pg.standard_normal((max(1, len(pairs)), cfg.fd_draws, D)) if pairs else None
            frozen.append((idx, pairs, dirs))
        return frozen

    scoring_inputs = frozen_batch_inputs(0)

    def score(Wm: np.ndarray) -> float:
        vals = [
            _batch_objective(data, idx, Wm, cfg, val_X, val_y, pairs, dirs)
            for idx, pairs, dirs in scoring_inputs
        ]
        return float(np.mean(vals)) if vals else 0.0

    snapshots = [W.copy()]
    trace = [score(W)]
    for epoch in range(1, cfg.epochs + 1):
        epoch_vals = []
        for idx, pairs, dirs in frozen_batch_inputs(epoch):
            fn = lambda Wm: _batch_objective(data, idx, Wm, cfg, val_X, val_y, pairs, dirs)
            grad = fd_gradient(fn, W.copy())
            W = W + cfg.lr * grad
            epoch_vals.append(fn(W))
        snapshots.append(W.copy())
        trace.append(float(np.mean(epoch_vals)) if epoch_vals else trace[0])

    scores = [score(Wm) for Wm in snapshots]
    best = int(np.argmax(scores))
    W_best = snapshots[best]
    return EmbeddingMatrix(
        vectors=data.features @ W_best.T,
        source="trained_linear",
        transform=W_best,
        training_trace=tuple(scores),
    )
