"""Scalar loss kernels and their feature-space gradients.

Two diagnostics measure the geometry of an embedding set: alignment
(log mean squared distance over same-label pairs) and uniformity (log of
the average pairwise Gaussian potential exp(-2 d^2)). The training losses
are the weighted alignment loss between original/augmented views, the
per-view uniformity loss, the domain uniformity loss against bank
prototypes, plus the supervised cross-entropy and batch-hard triplet
terms. The combined objective is

    total = ce + triplet + lambda * align + uniform + domain_uniform.

Every ``*_with_grad`` function returns the loss value together with exact
gradients w.r.t. its feature inputs, treating pair weights, prototype
contents and discrete selections (hard mining, nearest-prototype sets) as
constants. The plain kernels are thin wrappers that drop the gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import PrototypeBank, nearest_other_class, nearest_same_domain
from .errors import (
    DegenerateBatch,
    LabelOutOfRange,
    NonFiniteComponent,
    NoPositivePairs,
    ShapeMismatch,
    TooFewRows,
)
from .geometry import log_mean_exp, pairwise_sq_dist
from .weighting import PositivePairSet

# Mean squared distance is clamped here before the log so that an exactly
# collapsed class yields a finite diagnostic instead of -inf.
ALIGN_DIAG_FLOOR = 1e-12

# Guard for 1/d factors at (non-differentiable) zero distance.
DIST_GRAD_EPS = 1e-12


@dataclass(frozen=True)
class LossBundle:
    """The five components of the training objective plus their total."""

    ce: float
    triplet: float
    align: float
    uniform: float
    domain_uniform: float
    lambda_align: float
    total: float

    def components(self) -> tuple[float, ...]:
        return (self.ce, self.triplet, self.align, self.uniform, self.domain_uniform)


def total_objective(
    ce: float,
    triplet: float,
    align: float,
    uniform: float,
    domain_uniform: float,
    lambda_align: float,
) -> LossBundle:
    """Combine the five components into a LossBundle.

    Raises NonFiniteComponent if anything is NaN or infinite.
    """
    parts = (ce, triplet, align, uniform, domain_uniform, lambda_align)
    if not all(np.isfinite(p) for p in parts):
        raise NonFiniteComponent(f"non-finite loss component in {parts}")
    total = ce + triplet + lambda_align * align + uniform + domain_uniform
    return LossBundle(
        ce=float(ce),
        triplet=float(triplet),
        align=float(align),
        uniform=float(uniform),
        domain_uniform=float(domain_uniform),
        lambda_align=float(lambda_align),
        total=float(total),
    )


# ---------------------------------------------------------------------------
# diagnostics


def alignment_diagnostic(features: np.ndarray, labels: np.ndarray) -> float:
    """log of the mean squared distance over same-label distinct pairs."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    D = pairwise_sq_dist(features, features)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    if not same.any():
        raise NoPositivePairs("no same-label distinct pair")
    return float(np.log(max(float(D[same].mean()), ALIGN_DIAG_FLOOR)))


def uniformity_diagnostic(features: np.ndarray) -> float:
    """log mean of exp(-2 d^2) over all distinct pairs; in [-8, 0]."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n < 2:
        raise TooFewRows("uniformity needs at least two rows")
    D = pairwise_sq_dist(features, features)
    off = ~np.eye(n, dtype=bool)
    return log_mean_exp(D[off], -2.0)


# ---------------------------------------------------------------------------
# training losses (value + gradients)


def cross_entropy_with_grad(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log softmax likelihood; returns (loss, dlogits)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    B, C = logits.shape
    if C < 2:
        raise ShapeMismatch("classifier needs at least 2 classes")
    if labels.min() < 0 or labels.max() >= C:
        raise LabelOutOfRange(f"labels must lie in [0, {C})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(B)
    loss = float(-log_probs[rows, labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    dlogits /= B
    return loss, dlogits


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    return cross_entropy_with_grad(logits, labels)[0]


def batch_hard_triplet_with_grad(
    features: np.ndarray, labels: np.ndarray, margin: float
):
    """Batch-hard triplet loss on Euclidean distances; (loss, dfeatures).

    Per anchor: hardest positive = max distance among same-label others,
    hardest negative = min distance among different labels, hinged at
    ``margin`` and averaged over all anchors. Ties resolve to the lowest
    index. The 1/d factors in the gradient are floored at 1e-12; the
    hinge and the mining selections contribute subgradients.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    B = features.shape[0]
    D = np.sqrt(pairwise_sq_dist(features, features))
    same = labels[:, None] == labels[None, :]
    pos_mask = same.copy()
    np.fill_diagonal(pos_mask, False)
    neg_mask = ~same
    if not pos_mask.any(axis=1).all() or not neg_mask.any(axis=1).all():
        raise DegenerateBatch("every anchor needs a positive and a negative")
    rows = np.arange(B)
    p_idx = np.where(pos_mask, D, -np.inf).argmax(axis=1)
    n_idx = np.where(neg_mask, D, np.inf).argmin(axis=1)
    dp = D[rows, p_idx]
    dn = D[rows, n_idx]
    viol = dp - dn + margin
    loss = float(np.maximum(viol, 0.0).mean())

    grad = np.zeros_like(features)
    act = np.flatnonzero(viol > 0.0)
    if act.size:
        pa, na = p_idx[act], n_idx[act]
        gp = (features[act] - features[pa]) / np.maximum(dp[act], DIST_GRAD_EPS)[:, None] / B
        gn = (features[act] - features[na]) / np.maximum(dn[act], DIST_GRAD_EPS)[:, None] / B
        np.add.at(grad, act, gp - gn)
        np.add.at(grad, pa, -gp)
        np.add.at(grad, na, gn)
    return loss, grad


def batch_hard_triplet_loss(
    features: np.ndarray, labels: np.ndarray, margin: float
) -> float:
    return batch_hard_triplet_with_grad(features, labels, margin)[0]


def weighted_alignment_with_grad(
    orig: np.ndarray, aug: np.ndarray, pairs: PositivePairSet
):
    """sum_p wbar_p ||aug_i - orig_j||^2; returns (loss, dorig, daug)."""
    orig = np.asarray(orig, dtype=np.float64)
    aug = np.asarray(aug, dtype=np.float64)
    if len(pairs) == 0:
        raise NoPositivePairs("empty positive pair set")
    ii = pairs.pairs[:, 0]
    jj = pairs.pairs[:, 1]
    w = pairs.normalized_weights
    sq = np.clip(2.0 - 2.0 * np.einsum("ij,ij->i", aug[ii], orig[jj]), 0.0, 4.0)
    loss = float(w @ sq)
    diff = aug[ii] - orig[jj]
    scaled = 2.0 * w[:, None] * diff
    daug = np.zeros_like(aug)
    dorig = np.zeros_like(orig)
    np.add.at(daug, ii, scaled)
    np.add.at(dorig, jj, -scaled)
    return loss, dorig, daug


def weighted_alignment_loss(
    orig: np.ndarray, aug: np.ndarray, pairs: PositivePairSet
) -> float:
    return weighted_alignment_with_grad(orig, aug, pairs)[0]


def _uniformity_term_with_grad(X: np.ndarray):
    n = X.shape[0]
    if n < 2:
        raise TooFewRows("uniformity needs at least two rows")
    D = pairwise_sq_dist(X, X)
    off = ~np.eye(n, dtype=bool)
    value = log_mean_exp(D[off], -2.0)
    # Softmax weights over ordered distinct pairs; the (i,j) and (j,i)
    # contributions to row i combine into -8 * P_ij * (X_i - X_j).
    E = np.exp(-2.0 * D - float((-2.0 * D[off]).max()))
    np.fill_diagonal(E, 0.0)
    P = E / E.sum()
    grad = -8.0 * (P.sum(axis=1)[:, None] * X - P @ X)
    return value, grad


def uniformity_with_grad(orig: np.ndarray, aug: np.ndarray):
    """Per-view uniformity, summed; returns (loss, dorig, daug).

    Each view contributes log mean exp(-2 d^2) over its own distinct
    pairs; originals and augmented rows are never mixed.
    """
    vo, go = _uniformity_term_with_grad(np.asarray(orig, dtype=np.float64))
    va, ga = _uniformity_term_with_grad(np.asarray(aug, dtype=np.float64))
    return vo + va, go, ga


def uniformity_loss(orig: np.ndarray, aug: np.ndarray) -> float:
    return uniformity_with_grad(orig, aug)[0]


def _domain_term_with_grad(X, labels, domains, bank, nnear, domain_specific):
    B = X.shape[0]
    selections = []
    for i in range(B):
        if domain_specific:
            sel = nearest_same_domain(
                bank, X[i], int(domains[i]), int(labels[i]), nnear
            )
        else:
            sel = nearest_other_class(bank, X[i], int(labels[i]), nnear)
        selections.append(sel)
    denom = float(sum(len(s) for s in selections))
    total = 0.0
    weights = []  # exp(-2 d^2) per (sample, prototype)
    for i, sel in enumerate(selections):
        sq = np.clip(2.0 - 2.0 * bank.prototypes[sel] @ X[i], 0.0, 4.0)
        e = np.exp(-2.0 * sq)
        weights.append(e)
        total += float(e.sum())
    value = float(np.log(total / denom))
    grad = np.zeros_like(X)
    for i, sel in enumerate(selections):
        diff = X[i][None, :] - bank.prototypes[sel]
        grad[i] = (-4.0 / total) * (weights[i] @ diff)
    return value, grad


def domain_uniformity_with_grad(
    orig: np.ndarray,
    aug: np.ndarray,
    labels: np.ndarray,
    domains: np.ndarray,
    bank: PrototypeBank,
    nnear: int,
    domain_specific: bool = True,
):
    """Uniformity against nearest other-class prototypes; both views.

    For each feature, up to ``nnear`` nearest prototypes from the same
    source domain but a different class are selected (clamped to the
    available count, which also enters the denominator); with
    ``domain_specific=False`` the candidates span every domain.
    Prototypes are a momentum memory, not parameters: gradients flow only
    into the features. Returns (loss, dorig, daug).
    """
    orig = np.asarray(orig, dtype=np.float64)
    aug = np.asarray(aug, dtype=np.float64)
    labels = np.asarray(labels)
    domains = np.asarray(domains)
    vo, go = _domain_term_with_grad(orig, labels, domains, bank, nnear, domain_specific)
    va, ga = _domain_term_with_grad(aug, labels, domains, bank, nnear, domain_specific)
    return vo + va, go, ga


def domain_uniformity_loss(
    orig: np.ndarray,
    aug: np.ndarray,
    labels: np.ndarray,
    domains: np.ndarray,
    bank: PrototypeBank,
    nnear: int,
    domain_specific: bool = True,
) -> float:
    return domain_uniformity_with_grad(
        orig, aug, labels, domains, bank, nnear, domain_specific
    )[0]
