"""Bounded coalition payoff: learner utility plus a cosine dispersion bonus.

The payoff of a coalition S is

    v(S) = utility(S) + lambda * dispersion(S)

where utility(S) trains a small deterministic learner on the coalition's rows
and scores it on the validation split (empty or single-class coalitions score
chance level), and dispersion(S) is the mean cosine distance between
cross-label pairs inside S measured in the embedding space. Both terms are
bounded, so |v| <= B = 1 + lambda * d_max with d_max = 2 for cosine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import EMPTY_SET, LabeledDataset, PointSet, union

METRICS = ("accuracy", "balanced_accuracy", "auc")
LEARNERS = ("nearest_centroid", "ridge_logistic")

D_MAX = 2.0  # largest cosine distance between any two embedding rows


def chance_level(metric: str, num_classes: int) -> float:
    """Score of an uninformed predictor: 0.5 AUC, 1/num_classes otherwise."""
    if metric == "auc":
        return 0.5
    return 1.0 / num_classes


def _fit_nearest_centroid(X: np.ndarray, y: np.ndarray):
    classes = np.unique(y)
    centroids = np.stack([X[y == c].mean(axis=0) for c in classes])
    return classes, centroids


def _predict_nearest_centroid(model, val_X: np.ndarray):
    classes, centroids = model
    d2 = ((val_X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    pred = classes[np.argmin(d2, axis=1)]
    if classes.size == 2:
        # binary decision value: margin of the class-1 centroid over class-0
        score = np.sqrt(d2[:, 0]) - np.sqrt(d2[:, 1])
    else:
        score = None
    return pred, score, classes


def _fit_ridge_logistic(X: np.ndarray, y: np.ndarray, num_classes: int,
                        steps: int = 200, lr: float = 0.1, ridge: float = 1e-3):
    n, d = X.shape
    W = np.zeros((num_classes, d))
    b = np.zeros(num_classes)
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    for _ in range(steps):
        logits = X @ W.T + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        err = (p - onehot) / n
        W -= lr * (err.T @ X + ridge * W)
        b -= lr * err.sum(axis=0)
    return W, b


def _predict_ridge_logistic(model, val_X: np.ndarray):
    W, b = model
    logits = val_X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    pred = np.argmax(p, axis=1)
    score = p[:, 1] if W.shape[0] == 2 else None
    return pred, score, np.arange(W.shape[0])


def binary_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC with tie-averaged ranks; labels must be 0/1."""
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _score(metric: str, pred, score, val_y: np.ndarray, num_classes: int) -> float:
    if metric == "accuracy":
        return float(np.mean(pred == val_y))
    if metric == "balanced_accuracy":
        recalls = []
        for c in np.unique(val_y):
            mask = val_y == c
            recalls.append(float(np.mean(pred[mask] == c)))
        return float(np.mean(recalls))
    if metric == "auc":
        if score is None:
            return 0.5
        return binary_auc(np.asarray(score, dtype=np.float64), val_y)
    raise ValueError(f"unknown metric {metric!r}")


def coalition_utility(
    data: LabeledDataset,
    points: PointSet,
    metric: str = "accuracy",
    learner: str = "nearest_centroid",
    val_X: Optional[np.ndarray] = None,
    val_y: Optional[np.ndarray] = None,
) -> float:
    """Train the requested learner on the coalition's rows, score on validation.

    Coalitions that cannot produce a discriminative model (empty, or carrying
    fewer than two distinct labels) score chance level, as does a learner that
    fails numerically.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if learner not in LEARNERS:
        raise ValueError(f"unknown learner {learner!r}")
    if val_X is None:
        val_X, val_y = data.val_features, data.val_labels
    idx = points.indices
    if idx.size and idx[-1] >= data.n:
        raise IndexError(f"point index {int(idx[-1])} out of range for n={data.n}")
    chance = chance_level(metric, data.num_classes)
    if idx.size == 0:
        return chance
    X, y = data.features[idx], data.labels[idx]
    if np.unique(y).size < 2:
        return chance
    try:
        if learner == "nearest_centroid":
            pred, score, _ = _predict_nearest_centroid(_fit_nearest_centroid(X, y), val_X)
        else:
            model = _fit_ridge_logistic(X, y, data.num_classes)
            if not (np.isfinite(model[0]).all() and np.isfinite(model[1]).all()):
                return chance
            pred, score, _ = _predict_ridge_logistic(model, val_X)
        out = _score(metric, pred, score, val_y, data.num_classes)
    except FloatingPointError:
        return chance
    if not np.isfinite(out):
        return chance
    return float(out)


@dataclass(frozen=True)
class DispersionResult:
    value: float
    pair_count: int


def normalized_dispersion(
    embedding_vectors: np.ndarray, labels: np.ndarray, points: PointSet
) -> DispersionResult:
    """Mean cosine distance over cross-label pairs inside the coalition.

    The mean divides by max(1, pair count), so coalitions with no cross-label
    pair (empty, singleton, single-class) get value 0. A zero-norm embedding
    row is treated as lying at the maximum cosine distance (2) from every
    other row.
    """
    idx = points.indices
    total = int(idx.size)
    if total < 2:
        return DispersionResult(0.0, 0)
    Z = embedding_vectors[idx]
    y = labels[idx]
    norms = np.linalg.norm(Z, axis=1)
    nonzero = norms > 0.0
    classes, class_ids = np.unique(y, return_inverse=True)
    if classes.size < 2:
        return DispersionResult(0.0, 0)
    n_c = np.bincount(class_ids, minlength=classes.size).astype(np.int64)
    pair_count = int((total * total - int((n_c * n_c).sum())) // 2)
    # rows with positive norm contribute unit vectors; class-wise vector sums
    # turn the pairwise dot-product sum into a few d-dimensional dots
    m_c = np.bincount(class_ids, weights=nonzero.astype(np.float64), minlength=classes.size)
    unit = np.zeros_like(Z)
    unit[nonzero] = Z[nonzero] / norms[nonzero, None]
    sums = np.zeros((classes.size, Z.shape[1]))
    np.add.at(sums, class_ids, unit)
    m_total = float(m_c.sum())
    cross_nonzero = 0.5 * (m_total * m_total - float((m_c * m_c).sum()))
    grand = sums.sum(axis=0)
    dot_sum = 0.5 * (float(grand @ grand) - float((sums * sums).sum(axis=1).sum()))
    zero_pairs = pair_count - cross_nonzero
    dist_sum = 2.0 * zero_pairs + (cross_nonzero - dot_sum)
    return DispersionResult(float(dist_sum / max(1, pair_count)), pair_count)


class CharacteristicFn:
    """Memoised bounded payoff v(S) = utility(S) + lambda * dispersion(S).

    :param dataset: the labelled dataset being valued
    :param embedding: embedding rows aligned with the train split (an
        EmbeddingMatrix or a raw (n, d) array)
    :param lam: dispersion weight lambda >= 0
    :param metric: "accuracy" | "balanced_accuracy" | "auc" (binary only)
    :param learner: "nearest_centroid" | "ridge_logistic"

    Payoffs are cached by the exact byte key of the sorted index array;
    ``evaluations`` counts cache misses only. Evaluation is deterministic:
    both learners are closed-form or fixed-step full-batch, so no RNG is
    consumed.
    """

    def __init__(
        self,
        dataset: LabeledDataset,
        embedding,
        lam: float = 0.5,
        metric: str = "accuracy",
        learner: str = "nearest_centroid",
    ):
        vectors = getattr(embedding, "vectors", embedding)
        vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != dataset.n:
            raise ValueError("embedding rows must align with the train split")
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
        if learner not in LEARNERS:
            raise ValueError(f"unknown learner {learner!r}")
        if metric == "auc" and dataset.num_classes != 2:
            raise ValueError("auc metric requires a binary dataset")
        self.dataset = dataset
        self.vectors = vectors
        self.lam = float(lam)
        self.metric = metric
        self.learner = learner
        self._cache: dict[bytes, float] = {}
        self.evaluations = 0  # cache misses: actual payoff computations
        self.lookups = 0

    @property
    def d_max(self) -> float:
        return D_MAX

    @property
    def B(self) -> float:
        """Payoff bound: |v(S)| <= 1 + lambda * d_max."""
        return 1.0 + self.lam * D_MAX

    def empty_value(self) -> float:
        return self.evaluate(EMPTY_SET)

    def base_utility(self, points: PointSet) -> float:
        return coalition_utility(self.dataset, points, self.metric, self.learner)

    def normalized_dispersion(self, points: PointSet) -> DispersionResult:
        return normalized_dispersion(self.vectors, self.dataset.labels, points)

    def evaluate(self, points: PointSet) -> float:
        self.lookups += 1
        key = points.key()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        value = self.base_utility(points)
        if self.lam:
            value = value + self.lam * self.normalized_dispersion(points).value
        assert abs(value) <= self.B + 1e-12
        self._cache[key] = value
        self.evaluations += 1
        return value

    def level_payoff(self, coalitions: Sequence[PointSet]) -> float:
        """Payoff of a coalition-of-coalitions: evaluate the union of members."""
        merged = union(coalitions)
        if sum(len(c) for c in coalitions) != len(merged):
            raise ValueError("coalition member sets must be disjoint")
        return self.evaluate(merged)

    def reset_counters(self) -> None:
        self.evaluations = 0
        self.lookups = 0
