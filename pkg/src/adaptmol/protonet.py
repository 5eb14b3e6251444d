"""Inverse-distance weighted prototypes, dot-product prediction, episode loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DISTANCE_FLOOR = 1e-9
PROB_CLAMP = 1e-12


@dataclass
class Prototypes:
    positive: Tensor
    negative: Tensor


def prototype_weights(embeddings: Tensor) -> Tensor:
    """Normalised weights (K,) for the rows of a (K, d) class embedding matrix.

    Each point's distance is the sum of its Euclidean distances to every
    point in the class; weights are the floored reciprocals, normalised.
    """
    k = embeddings.shape[0]
    if k == 0:
        raise ValueError("prototype needs at least one embedding")
    if k == 1:
        return Tensor(np.ones(1))
    # one row per ordered pair (i, j), i != j
    pairs = [(i, j) for i in range(k) for j in range(k) if i != j]
    diff = np.zeros((len(pairs), k))
    owner = np.zeros((k, len(pairs)))
    for r, (i, j) in enumerate(pairs):
        diff[r, i], diff[r, j] = 1.0, -1.0
        owner[i, r] = 1.0
    dist = Tensor(owner) @ ad.row_norms(Tensor(diff) @ embeddings)
    weight = ad.reciprocal(dist, floor=DISTANCE_FLOOR)
    return ad.multiply(ad.reciprocal(ad.tensor_sum(weight)), weight)


def prototype(embeddings: Tensor) -> Tensor:
    """Weighted class prototype (d,) from a (K, d) embedding matrix."""
    if embeddings.shape[0] == 1:
        return ad.reshape(embeddings, (embeddings.shape[1],))
    return prototype_weights(embeddings) @ embeddings


def build_prototypes(support: Tensor, labels) -> Prototypes:
    """Split support embeddings (2K, d) by label and build both prototypes."""
    y = np.asarray(labels).astype(int)
    if not (np.any(y == 1) and np.any(y == 0)):
        raise ValueError("support set needs both classes")
    return Prototypes(prototype(_rows(support, y == 1)), prototype(_rows(support, y == 0)))


def _rows(m: Tensor, mask: np.ndarray) -> Tensor:
    idx = np.flatnonzero(mask)
    sel = np.zeros((idx.size, m.shape[0]))
    sel[np.arange(idx.size), idx] = 1.0
    return Tensor(sel) @ m


def class_probabilities(queries: Tensor, protos: Prototypes) -> Tensor:
    """(M, 2) softmax over [z.p_pos, z.p_neg] for each query row."""
    z = queries if queries.value.ndim == 2 else ad.reshape(queries, (1, queries.shape[0]))
    d = protos.positive.shape[0]
    s_pos = z @ ad.reshape(protos.positive, (d, 1))
    s_neg = z @ ad.reshape(protos.negative, (d, 1))
    return ad.softmax(ad.concat_columns([s_pos, s_neg]))


def predict(queries: Tensor, protos: Prototypes) -> Tensor:
    """Positive-class probability for each query (shape (M,), or () for one vector)."""
    p = ad.slice_columns(class_probabilities(queries, protos), 0, 1)
    shape = (queries.shape[0],) if queries.value.ndim == 2 else ()
    return ad.reshape(p, shape)


def episode_loss_from_probs(probs: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy over an (M, 2) [p, 1 - p] matrix."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    m = y.size
    if m == 0:
        raise ValueError("episode loss needs at least one query")
    target = np.stack([y, 1.0 - y], axis=1)
    clamped = ad.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return ad.scale(ad.tensor_sum(ad.multiply(Tensor(target), ad.log(clamped))), -1.0 / m)


def episode_loss(p: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy of positive-class probabilities ``p`` (M,)."""
    m = p.shape[0] if p.value.ndim else 1
    col = ad.reshape(p, (m, 1))
    both = ad.concat_columns([col, Tensor(np.ones((m, 1))) - col])
    return episode_loss_from_probs(both, labels)

