"""Balancing alignment and uniformity for domain-generalizable embeddings.

Library + CLI implementing the BAU training objective at desk scale:
hypersphere loss kernels, k-reciprocal Jaccard reliability weighting, a
domain-aware prototype memory bank, a small hand-differentiated encoder,
synthetic multi-domain identity data, retrieval metrics, and a
deterministic experiment harness.
"""

from .bank import PrototypeBank, init_bank, momentum_update, nearest_same_domain
from .evalmetrics import RetrievalReport, average_precision, evaluate
from .geometry import l2_normalize, log_mean_exp, pairwise_sq_dist
from .losses import (
    LossBundle,
    alignment_diagnostic,
    batch_hard_triplet_loss,
    cross_entropy_loss,
    domain_uniformity_loss,
    total_objective,
    uniformity_diagnostic,
    uniformity_loss,
    weighted_alignment_loss,
)
from .nn import (
    EncoderParams,
    ModelSpec,
    ObjectiveConfig,
    OptimizerState,
    fd_check,
    forward,
    grad_total,
    init_optimizer,
    init_params,
    opt_step,
)
from .synthdata import (
    AugmentationSpec,
    Dataset,
    DatasetSpec,
    LabeledBatch,
    augment,
    generate,
    pk_sample,
)
from .trainer import (
    ExperimentConfig,
    OptimizerSpec,
    RunHistory,
    TrainResult,
    ablate,
    default_config,
    sweep_probability,
    train,
)
from .weighting import PositivePairSet, jaccard_weight, k_reciprocal_sets, pair_weights

__version__ = "0.1.0"
