"""Reliability weights for (augmented, original) positive pairs.

Each weight is the Jaccard similarity between two k-reciprocal
nearest-neighbor sets: the augmented feature's set within the augmented
mini-batch, and the original feature's set within the original
mini-batch. Both sets are index sets over the same batch positions
0..B-1, so they are directly comparable; an untouched augmentation sees
exactly the original neighborhood and scores 1, while a badly corrupted
one lands in a different neighborhood, shares few reciprocal neighbors,
and scores near 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, KTooLarge, NoPositivePairs
from .geometry import pairwise_sq_dist

# When the weights sum to (numerically) nothing, fall back to uniform
# weighting instead of silently dropping the alignment term.
FALLBACK_EPS = 1e-12


@dataclass(frozen=True)
class PositivePairSet:
    """Same-label (aug i, orig j) pairs with raw and normalized weights.

    ``pairs[p] = (i, j)`` means row i of the augmented view paired with
    row j of the original view. ``normalized_weights`` sums to 1.
    """

    pairs: np.ndarray  # (P, 2) int64
    raw_weights: np.ndarray  # (P,) float64 in [0, 1]
    normalized_weights: np.ndarray  # (P,) float64, sums to 1

    def __len__(self) -> int:
        return self.pairs.shape[0]


def k_reciprocal_sets(pool: np.ndarray, k: int) -> list[np.ndarray]:
    """k-reciprocal nearest-neighbor set for every row of ``pool``.

    R_k(i) = { j != i : j in kNN_k(i) and i in kNN_k(j) }, where kNN_k(i)
    is the k smallest squared distances from row i (self excluded), ties
    broken by ascending index. Returned as sorted index arrays.
    """
    pool = np.asarray(pool, dtype=np.float64)
    m = pool.shape[0]
    if not 1 <= k < m:
        raise KTooLarge(k, m)
    D = pairwise_sq_dist(pool, pool)
    np.fill_diagonal(D, np.inf)
    order = np.argsort(D, axis=1, kind="stable")[:, :k]
    knn = np.zeros((m, m), dtype=bool)
    knn[np.repeat(np.arange(m), k), order.ravel()] = True
    recip = knn & knn.T
    return [np.flatnonzero(recip[i]) for i in range(m)]


def jaccard_weight(Ri, Rj) -> float:
    """|Ri & Rj| / |Ri | Rj|; defined as 0 when both sets are empty.

    An isolated pair carries no evidence of reliability, hence 0 rather
    than 1 for the empty/empty case.
    """
    a = set(int(x) for x in Ri)
    b = set(int(x) for x in Rj)
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


def pair_weights(
    orig: np.ndarray, aug: np.ndarray, labels: np.ndarray, k: int
) -> PositivePairSet:
    """Jaccard reliability weights for every same-label (aug, orig) pair.

    Neighbor sets are computed per view (augmented rows among the
    augmented batch, original rows among the original batch) and compared
    as sets of batch positions. Weights are normalized to sum to 1; if
    they all vanish the pairs fall back to uniform weights, which reduces
    the weighted alignment loss to its plain mean form.
    """
    orig = np.asarray(orig, dtype=np.float64)
    aug = np.asarray(aug, dtype=np.float64)
    if orig.shape != aug.shape:
        raise DimensionMismatch(
            f"orig {orig.shape} and aug {aug.shape} must be row-aligned"
        )
    labels = np.asarray(labels)
    ii, jj = np.nonzero(labels[:, None] == labels[None, :])
    if ii.size == 0:
        raise NoPositivePairs("batch contains no same-label pair")
    R_orig = k_reciprocal_sets(orig, k)
    R_aug = k_reciprocal_sets(aug, k)
    w = np.array(
        [jaccard_weight(R_aug[i], R_orig[j]) for i, j in zip(ii, jj)], dtype=np.float64
    )
    total = float(w.sum())
    if total < FALLBACK_EPS:
        wbar = np.full(w.shape, 1.0 / w.size)
    else:
        wbar = w / total
    return PositivePairSet(
        pairs=np.stack([ii, jj], axis=1).astype(np.int64),
        raw_weights=w,
        normalized_weights=wbar,
    )


def uniform_pair_set(labels: np.ndarray) -> PositivePairSet:
    """All same-label (aug, orig) pairs, uniformly weighted.

    Used when the weighting strategy is disabled; the weighted alignment
    loss then equals the plain mean over positive pairs.
    """
    labels = np.asarray(labels)
    ii, jj = np.nonzero(labels[:, None] == labels[None, :])
    if ii.size == 0:
        raise NoPositivePairs("batch contains no same-label pair")
    n = ii.size
    return PositivePairSet(
        pairs=np.stack([ii, jj], axis=1).astype(np.int64),
        raw_weights=np.ones(n),
        normalized_weights=np.full(n, 1.0 / n),
    )
