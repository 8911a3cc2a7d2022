"""Deterministic multi-domain identity data, augmentation, PK batching.

The generator is a desk-scale stand-in for multi-source re-identification
data: every identity is a unit base vector, every domain applies a fixed
random affine map (rotation + per-coordinate gain + offset, all scaled by
``domain_shift_strength``), and samples are noisy copies of their
identity base pushed through their domain's map. An optional held-out
domain gets a fresh map and fresh identities (disjoint label space) with
a per-identity query/gallery split.

Augmentation simulates image corruption at vector level: a contiguous
zero mask (erasing), additive Gaussian jitter (photometric noise) and a
random global scale (geometric change). With probability ``p`` all
transforms with non-neutral severity fire in random order; otherwise the
sample passes through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidSpec, NotEnoughIdentities
from .geometry import l2_normalize
from .io import atomic_write, fmt_float, read_csv

DATASET_SCHEMA = "bau.dataset.v1"

# Internal severity scales turning domain_shift_strength into map params.
ROTATION_ANGLE_SCALE = 0.35
GAIN_SCALE = 0.25
OFFSET_SCALE = 0.25


@dataclass(frozen=True)
class DatasetSpec:
    num_domains: int = 3
    ids_per_domain: int = 24
    instances_per_id: int = 8
    input_dim: int = 24
    intra_class_noise: float = 0.15
    domain_shift_strength: float = 1.6
    heldout_domain: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.num_domains < 2:
            raise InvalidSpec("training data needs at least 2 source domains")
        if self.ids_per_domain < 2:
            raise InvalidSpec("each domain needs at least 2 identities")
        if self.instances_per_id < 1 or self.input_dim < 2:
            raise InvalidSpec("counts must be positive and input_dim >= 2")
        if self.intra_class_noise < 0 or self.domain_shift_strength < 0:
            raise InvalidSpec("noise and shift strength must be non-negative")


@dataclass(frozen=True)
class DomainMap:
    rotation: np.ndarray  # (D, D) orthogonal
    gain: np.ndarray  # (D,)
    offset: np.ndarray  # (D,)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X * (1.0 + self.gain)) @ self.rotation.T + self.offset


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, D)
    identities: np.ndarray  # (n,) global identity ids
    domains: np.ndarray  # (n,) domain ids; held-out domain is the last id
    split: np.ndarray  # (n,) 'train' | 'query' | 'gallery'
    num_source_classes: int
    domain_maps: list[DomainMap] | None = None

    @property
    def heldout_domain_id(self) -> int | None:
        held = self.domains[self.split != "train"]
        return int(held[0]) if held.size else None

    def train_view(self):
        m = self.split == "train"
        return self.inputs[m], self.identities[m], self.domains[m]

    def heldout_view(self):
        q = self.split == "query"
        g = self.split == "gallery"
        return (self.inputs[q], self.identities[q]), (self.inputs[g], self.identities[g])


def _random_rotation(dim: int, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Product of ``dim`` random plane rotations; exactly I at strength 0."""
    R = np.eye(dim)
    for _ in range(dim):
        i, j = rng.choice(dim, size=2, replace=False)
        theta = strength * ROTATION_ANGLE_SCALE * rng.normal()
        c, s = np.cos(theta), np.sin(theta)
        row_i, row_j = R[i].copy(), R[j].copy()
        R[i] = c * row_i - s * row_j
        R[j] = s * row_i + c * row_j
    return R


def _draw_domain_map(dim: int, strength: float, rng: np.random.Generator) -> DomainMap:
    rotation = _random_rotation(dim, strength, rng)
    gain = strength * GAIN_SCALE * rng.normal(size=dim)
    offset = strength * OFFSET_SCALE * rng.normal(size=dim)
    return DomainMap(rotation=rotation, gain=gain, offset=offset)


def generate(spec: DatasetSpec) -> Dataset:
    """Build the full dataset deterministically from ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    D = spec.input_dim
    n_source_ids = spec.num_domains * spec.ids_per_domain
    n_total_ids = n_source_ids + (spec.ids_per_domain if spec.heldout_domain else 0)
    bases = l2_normalize(rng.normal(size=(n_total_ids, D)))
    maps = [
        _draw_domain_map(D, spec.domain_shift_strength, rng)
        for _ in range(spec.num_domains + (1 if spec.heldout_domain else 0))
    ]

    inputs, identities, domains, split = [], [], [], []
    for dom in range(spec.num_domains):
        ids = np.arange(dom * spec.ids_per_domain, (dom + 1) * spec.ids_per_domain)
        base_block = np.repeat(bases[ids], spec.instances_per_id, axis=0)
        noise = rng.normal(0.0, spec.intra_class_noise, size=base_block.shape)
        inputs.append(maps[dom].apply(base_block + noise))
        identities.append(np.repeat(ids, spec.instances_per_id))
        domains.append(np.full(base_block.shape[0], dom))
        split.append(np.full(base_block.shape[0], "train"))

    if spec.heldout_domain:
        dom = spec.num_domains
        ids = np.arange(n_source_ids, n_total_ids)
        base_block = np.repeat(bases[ids], spec.instances_per_id, axis=0)
        noise = rng.normal(0.0, spec.intra_class_noise, size=base_block.shape)
        inputs.append(maps[dom].apply(base_block + noise))
        identities.append(np.repeat(ids, spec.instances_per_id))
        domains.append(np.full(base_block.shape[0], dom))
        inst = np.tile(np.arange(spec.instances_per_id), spec.ids_per_domain)
        split.append(np.where(inst == 0, "query", "gallery"))

    return Dataset(
        inputs=np.vstack(inputs),
        identities=np.concatenate(identities),
        domains=np.concatenate(domains),
        split=np.concatenate(split),
        num_source_classes=n_source_ids,
        domain_maps=maps,
    )


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentationSpec:
    probability: float = 0.5
    mask_fraction: float = 0.45  # contiguous coordinates zeroed
    jitter_sigma: float = 0.1  # additive Gaussian noise
    scale_range: tuple[float, float] = (0.6, 1.4)  # global multiplier
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise InvalidSpec("augmentation probability must lie in [0, 1]")
        if not 0.0 <= self.mask_fraction < 1.0:
            raise InvalidSpec("mask_fraction must lie in [0, 1)")
        if self.jitter_sigma < 0:
            raise InvalidSpec("jitter_sigma must be non-negative")
        lo, hi = self.scale_range
        if lo > hi:
            raise InvalidSpec("scale_range must be (low, high) with low <= high")


@dataclass(frozen=True)
class AugDescriptor:
    """Which transforms actually fired on one sample."""

    applied: bool
    transforms: tuple[str, ...] = ()
    mask_start: int = -1
    mask_len: int = 0
    scale: float = 1.0


_UNTOUCHED = AugDescriptor(applied=False)


def augment(
    x: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator
) -> tuple[np.ndarray, AugDescriptor]:
    """Corrupt ``x`` with probability ``spec.probability``.

    When the draw fires, every transform with a non-neutral severity is
    applied once, in random order. All severities neutral means the
    identity map even at probability 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if rng.random() >= spec.probability:
        return x.copy(), _UNTOUCHED
    enabled = []
    if spec.mask_fraction > 0:
        enabled.append("mask")
    if spec.jitter_sigma > 0:
        enabled.append("jitter")
    if tuple(spec.scale_range) != (1.0, 1.0):
        enabled.append("scale")
    order = [enabled[i] for i in rng.permutation(len(enabled))]
    out = x.copy()
    fired: list[str] = []
    mask_start, mask_len, scale = -1, 0, 1.0
    for name in order:
        if name == "mask":
            mask_len = int(round(spec.mask_fraction * x.size))
            if mask_len == 0:
                continue
            mask_start = int(rng.integers(0, x.size - mask_len + 1))
            out[mask_start : mask_start + mask_len] = 0.0
        elif name == "jitter":
            out += rng.normal(0.0, spec.jitter_sigma, size=x.size)
        elif name == "scale":
            scale = float(rng.uniform(*spec.scale_range))
            out *= scale
        fired.append(name)
    return out, AugDescriptor(
        applied=True,
        transforms=tuple(fired),
        mask_start=mask_start,
        mask_len=mask_len if "mask" in fired else 0,
        scale=scale,
    )


# ---------------------------------------------------------------------------
# batching


@dataclass
class LabeledBatch:
    """Row-aligned original/augmented views with labels and metadata."""

    orig_inputs: np.ndarray
    aug_inputs: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    descriptors: tuple[AugDescriptor, ...] = field(default_factory=tuple)

    def with_augmentation(
        self, spec: AugmentationSpec, rng: np.random.Generator
    ) -> "LabeledBatch":
        rows, descriptors = [], []
        for row in self.orig_inputs:
            out, desc = augment(row, spec, rng)
            rows.append(out)
            descriptors.append(desc)
        return replace(
            self, aug_inputs=np.vstack(rows), descriptors=tuple(descriptors)
        )


def pk_sample(
    dataset: Dataset, P: int, K_inst: int, rng: np.random.Generator
) -> LabeledBatch:
    """Identity-balanced batch: P identities, K_inst instances each.

    Instances are drawn without replacement when the identity has enough
    samples, with replacement otherwise; the assembled batch order is then
    shuffled. The augmented view starts as a copy of the original; apply
    :meth:`LabeledBatch.with_augmentation` to corrupt it.
    """
    inputs, identities, domains = dataset.train_view()
    available = np.unique(identities)
    if available.size < P:
        raise NotEnoughIdentities(
            f"need {P} identities, dataset has {available.size}"
        )
    chosen = rng.choice(available, size=P, replace=False)
    picks = []
    for ident in chosen:
        idxs = np.flatnonzero(identities == ident)
        replace_draw = idxs.size < K_inst
        picks.append(rng.choice(idxs, size=K_inst, replace=replace_draw))
    sel = np.concatenate(picks)[rng.permutation(P * K_inst)]
    orig = inputs[sel]
    return LabeledBatch(
        orig_inputs=orig,
        aug_inputs=orig.copy(),
        labels=identities[sel],
        domains=domains[sel],
        descriptors=tuple(_UNTOUCHED for _ in range(sel.size)),
    )


# ---------------------------------------------------------------------------
# CSV import/export


def save_dataset_csv(dataset: Dataset, path) -> None:
    """One row per sample: ``domain,identity,split,x0..x{D-1}``."""
    D = dataset.inputs.shape[1]
    header = ["domain", "identity", "split"] + [f"x{i}" for i in range(D)]
    with atomic_write(path) as fh:
        fh.write(f"# schema={DATASET_SCHEMA}\n")
        fh.write(",".join(header) + "\n")
        for i in range(dataset.inputs.shape[0]):
            cells = [
                str(int(dataset.domains[i])),
                str(int(dataset.identities[i])),
                str(dataset.split[i]),
            ] + [fmt_float(v) for v in dataset.inputs[i]]
            fh.write(",".join(cells) + "\n")


def load_dataset_csv(path) -> Dataset:
    schema, header, rows = read_csv(path)
    if schema != DATASET_SCHEMA:
        raise InvalidSpec(f"unexpected dataset schema {schema!r}")
    D = len(header) - 3
    inputs = np.array([[float(c) for c in row[3:]] for row in rows])
    if inputs.shape[1] != D:
        raise InvalidSpec("ragged dataset CSV")
    domains = np.array([int(row[0]) for row in rows])
    identities = np.array([int(row[1]) for row in rows])
    split = np.array([row[2] for row in rows])
    num_source = int(np.unique(identities[split == "train"]).size)
    return Dataset(
        inputs=inputs,
        identities=identities,
        domains=domains,
        split=split,
        num_source_classes=num_source,
        domain_maps=None,
    )
