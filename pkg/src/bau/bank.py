"""Class-prototype feature memory bank.

One unit-norm prototype per identity class, each class owned by exactly
one source domain. Prototypes are momentum-updated from original-image
features during training and queried by the domain uniformity loss for
the nearest same-domain, different-class prototypes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyClass,
    EmptyDomainPrototypes,
    InitDegenerate,
    InvalidSpec,
    UnknownClass,
)
from .geometry import ZERO_NORM_EPS, l2_normalize, pairwise_sq_dist


@dataclass
class PrototypeBank:
    prototypes: np.ndarray  # (num_classes, d), unit rows
    class_domain: np.ndarray  # (num_classes,) domain id per class
    mu: float  # momentum kept on the OLD prototype per update

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]


def init_bank(
    features: np.ndarray,
    labels: np.ndarray,
    domains: np.ndarray,
    mu: float,
    num_classes: int | None = None,
) -> PrototypeBank:
    """Build a bank from one forward pass over the training set.

    Each prototype is the re-normalized mean of its class's features.

    Raises:
        EmptyClass: a class id in [0, num_classes) has no feature.
        InitDegenerate: a class mean has zero norm (e.g. antipodal pair).
        InvalidSpec: a class spans several domains, or a domain owns
            fewer than two classes (the "different class" selection of the
            domain uniformity loss needs at least one alternative).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    domains = np.asarray(domains)
    if not 0.0 <= mu <= 1.0:
        raise InvalidSpec(f"momentum mu must lie in [0, 1], got {mu}")
    n_classes = int(num_classes) if num_classes is not None else int(labels.max()) + 1
    d = features.shape[1]
    protos = np.empty((n_classes, d))
    class_domain = np.empty(n_classes, dtype=np.int64)
    for c in range(n_classes):
        rows = np.flatnonzero(labels == c)
        if rows.size == 0:
            raise EmptyClass(c)
        doms = np.unique(domains[rows])
        if doms.size != 1:
            raise InvalidSpec(f"class {c} spans domains {doms.tolist()}")
        class_domain[c] = doms[0]
        mean = features[rows].mean(axis=0)
        if np.linalg.norm(mean) <= ZERO_NORM_EPS:
            raise InitDegenerate(c)
        protos[c] = mean
    _, counts = np.unique(class_domain, return_counts=True)
    if counts.min() < 2:
        raise InvalidSpec("every domain must own at least two classes")
    return PrototypeBank(
        prototypes=l2_normalize(protos), class_domain=class_domain, mu=float(mu)
    )


def momentum_update(
    bank: PrototypeBank, batch_features: np.ndarray, labels: np.ndarray
) -> PrototypeBank:
    """Blend batch class means into the prototypes and re-normalize.

    For every class present in the batch: c <- mu*c + (1-mu)*mean, then
    back to unit norm. Classes absent from the batch keep their rows
    bit-identical. Features must come from original images only; the
    caller enforces that.
    """
    batch_features = np.asarray(batch_features, dtype=np.float64)
    labels = np.asarray(labels)
    protos = bank.prototypes.copy()
    for c in np.unique(labels):
        c = int(c)
        if c < 0 or c >= bank.num_classes:
            raise UnknownClass(c)
        mean = batch_features[labels == c].mean(axis=0)
        blended = bank.mu * protos[c] + (1.0 - bank.mu) * mean
        if np.linalg.norm(blended) <= ZERO_NORM_EPS:
            raise InitDegenerate(c)
        protos[c] = l2_normalize(blended[None, :])[0]
    return PrototypeBank(prototypes=protos, class_domain=bank.class_domain, mu=bank.mu)


def nearest_same_domain(
    bank: PrototypeBank,
    feature: np.ndarray,
    domain: int,
    exclude_class: int,
    nnear: int,
) -> np.ndarray:
    """Closest prototypes from ``domain`` excluding ``exclude_class``.

    Up to ``nnear`` class indices sorted by ascending squared distance to
    ``feature``, ties by ascending class index. Fewer than ``nnear``
    candidates simply returns them all.
    """
    mask = (bank.class_domain == domain) & (
        np.arange(bank.num_classes) != exclude_class
    )
    cand = np.flatnonzero(mask)
    if cand.size == 0:
        raise EmptyDomainPrototypes(domain)
    return _take_nearest(bank, feature, cand, nnear)


def nearest_other_class(
    bank: PrototypeBank, feature: np.ndarray, exclude_class: int, nnear: int
) -> np.ndarray:
    """Domain-agnostic variant: closest prototypes of any other class.

    Used by the ablation that drops the domain-specific restriction.
    """
    cand = np.flatnonzero(np.arange(bank.num_classes) != exclude_class)
    if cand.size == 0:
        raise EmptyDomainPrototypes(-1)
    return _take_nearest(bank, feature, cand, nnear)


def _take_nearest(bank, feature, cand, nnear):
    feature = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    d = pairwise_sq_dist(feature, bank.prototypes[cand])[0]
    order = np.argsort(d, kind="stable")  # cand ascending => ties by class index
    return cand[order[: min(int(nnear), cand.size)]]
