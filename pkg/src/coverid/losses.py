"""Joint training objective: focal + center + batch-hard triplet.

focal:   mean_i of -alpha_i * (1 - p_i)^gamma * log(p_i), where p_i is the
         softmax probability of the true class and alpha_i is an
         inverse-class-frequency weight. gamma = 0 with uniform alpha
         reduces to cross-entropy.
center:  mean_i of 0.5 * ||x_i - c_{y_i}||^2 against non-learned per-class
         centers updated by a mean-difference rule after each step.
triplet: batch-hard hinge max(d_p - d_n + margin, 0) on Euclidean
         distances, where d_p is each anchor's farthest positive and d_n
         its nearest negative; averaged over anchors that have both.
total:   lambda_focal * focal + lambda_center * center + lambda_tri * triplet.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    LabelOutOfRangeError,
    NonFiniteValueError,
    UnknownClassError,
)
from .nn import tensor as T
from .nn.tensor import Tensor

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    triplet_margin: float = 0.3
    lambda_focal: float = 1.0
    lambda_center: float = 0.01
    lambda_tri: float = 0.1
    center_lr: float = 0.5
    alpha_clamp: tuple[float, float] = (0.1, 10.0)
    # distance used by the triplet term; "euclidean" on the raw
    # pre-bottleneck embedding, or "cosine" on its normalized copy
    triplet_distance: str = "euclidean"

    def validate(self) -> None:
        if self.triplet_margin <= 0:
            raise ValueError("triplet margin must be positive")
        if min(self.lambda_focal, self.lambda_center, self.lambda_tri) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.triplet_distance not in ("euclidean", "cosine"):
            raise ValueError(f"unknown triplet distance {self.triplet_distance!r}")


def class_weights(class_counts: np.ndarray, clamp: tuple[float, float] = (0.1, 10.0)) -> np.ndarray:
    """Inverse-frequency weights alpha_c = N_total / (C * N_c), clamped."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.sum() <= 0:
        raise ValueError("class counts must sum to a positive number")
    weights = counts.sum() / (len(counts) * np.maximum(counts, 1))
    return np.clip(weights, clamp[0], clamp[1])


def focal_loss(logits: Tensor, labels: np.ndarray, alpha: np.ndarray, gamma: float = 2.0) -> Tensor:
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelOutOfRangeError(
            f"labels in [{labels.min()}, {labels.max()}] for {n_classes} classes"
        )
    probs = T.softmax(logits, axis=-1)
    p = T.clamp_min(T.gather_rows(probs, labels), LOG_CLAMP)
    focus = T.power(T.sub(Tensor(np.ones(1, dtype=logits.dtype)), p), gamma)
    weighted = T.mul(T.mul(focus, T.log(p)), Tensor(np.asarray(alpha)[labels].astype(logits.dtype)))
    return T.scale(T.mean(weighted), -1.0)


class CenterBank:
    """One center vector per class. Centers receive no gradient; they move
    toward their class means by `update` after each optimizer step."""

    def __init__(self, n_classes: int, dim: int, dtype=np.float32):
        self.centers = np.zeros((n_classes, dim), dtype=dtype)

    def update(self, embeddings: np.ndarray, labels: np.ndarray, lr: float = 0.5) -> None:
        for c in np.unique(labels):
            sel = embeddings[labels == c]
            self.centers[c] += lr * (sel.mean(axis=0) - self.centers[c])


def center_loss(embeddings: Tensor, labels: np.ndarray, bank: CenterBank) -> Tensor:
    labels = np.asarray(labels)
    if labels.max() >= len(bank.centers) or labels.min() < 0:
        raise UnknownClassError(f"label outside center bank of size {len(bank.centers)}")
    targets = Tensor(bank.centers[labels].astype(embeddings.dtype))
    diff = T.sub(embeddings, targets)
    return T.scale(T.mean(T.tsum(T.mul(diff, diff), axis=1)), 0.5)


def _pairwise_distances(embeddings: Tensor) -> Tensor:
    sq = T.tsum(T.mul(embeddings, embeddings), axis=1, keepdims=True)
    cross = T.matmul(embeddings, T.transpose(embeddings, (1, 0)))
    d2 = T.add(T.sub(sq, T.scale(cross, 2.0)), T.transpose(sq, (1, 0)))
    return T.sqrt(T.clamp_min(d2, 1e-12))


def triplet_loss(
    embeddings: Tensor, labels: np.ndarray, margin: float = 0.3
) -> tuple[Tensor, int]:
    """Batch-hard triplet loss; returns (loss, number of valid anchors).

    An anchor is valid when the batch holds at least one other sample of
    its class and one sample of a different class. A degenerate batch
    yields a constant 0 loss and a warning.
    """
    labels = np.asarray(labels)
    n = len(labels)
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    valid = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    n_valid = int(valid.sum())
    if n_valid == 0:
        logger.warning("triplet loss: degenerate batch (no valid anchors), using 0")
        return Tensor(np.zeros((), dtype=embeddings.dtype)), 0

    dist = _pairwise_distances(embeddings)
    dt = embeddings.dtype
    fill = np.asarray(-1e30, dtype=dt)
    d_pos = T.reduce_max(T.add(dist, Tensor(np.where(pos_mask, 0, fill).astype(dt))), axis=1)
    d_neg = T.reduce_min(T.add(dist, Tensor(np.where(neg_mask, 0, -fill).astype(dt))), axis=1)
    hinge = T.relu(T.add_const(T.sub(d_pos, d_neg), margin))
    picked = T.mul(hinge, Tensor(valid.astype(dt)))
    return T.scale(T.tsum(picked), 1.0 / n_valid), n_valid


def total_loss(
    focal: Tensor, center: Tensor, triplet: Tensor, cfg: LossConfig
) -> Tensor:
    for name, part in (("focal", focal), ("center", center), ("triplet", triplet)):
        if not np.isfinite(part.data).all():
            raise NonFiniteValueError(f"{name} loss is non-finite")
    return T.add(
        T.add(T.scale(focal, cfg.lambda_focal), T.scale(center, cfg.lambda_center)),
        T.scale(triplet, cfg.lambda_tri),
    )
