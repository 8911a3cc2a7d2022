"""Minimal differentiable encoder with hand-written reverse mode.

The encoder is a fully-connected stack with rectifier activations between
layers (none after the last), an L2 normalization onto the unit sphere,
and a bias-free linear classifier head that consumes the
*pre-normalization* features. Gradients of the full training objective
are assembled by hand: each loss kernel supplies exact gradients w.r.t.
the embeddings/logits it consumes, and this module backpropagates them
through the normalization and the affine stack. Pair weights, prototypes
and discrete selections are constants per step.

``fd_check`` verifies any parameter configuration against central finite
differences of the scalar objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bank import PrototypeBank
from .errors import DegenerateEmbedding, ShapeMismatch, StepOutOfRange
from .geometry import UNIT_SNAP_TOL, ZERO_NORM_EPS
from .losses import (
    LossBundle,
    batch_hard_triplet_with_grad,
    cross_entropy_with_grad,
    domain_uniformity_with_grad,
    total_objective,
    uniformity_with_grad,
    weighted_alignment_with_grad,
)
from .weighting import PositivePairSet, pair_weights, uniform_pair_set

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Linear warmup starts at this fraction of the base learning rate.
WARMUP_START_FACTOR = 0.1

FD_STEP_MIN = 1e-7
FD_STEP_MAX = 1e-3


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of the encoder: hidden widths and embedding size."""

    hidden_dims: tuple[int, ...] = (48,)
    embed_dim: int = 12


@dataclass
class EncoderParams:
    weights: list[np.ndarray]  # (fan_in, fan_out) per layer
    biases: list[np.ndarray]  # (fan_out,) per layer
    classifier: np.ndarray  # (num_classes, embed_dim)

    def blocks(self):
        """Named parameter arrays, in a fixed deterministic order."""
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            yield f"layers.{l}.W", W
            yield f"layers.{l}.b", b
        yield "classifier", self.classifier

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
            classifier=self.classifier.copy(),
        )

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams(
            weights=[np.zeros_like(W) for W in self.weights],
            biases=[np.zeros_like(b) for b in self.biases],
            classifier=np.zeros_like(self.classifier),
        )

    def num_parameters(self) -> int:
        return sum(arr.size for _, arr in self.blocks())


def init_params(
    input_dim: int,
    spec: ModelSpec,
    num_classes: int,
    rng: np.random.Generator,
) -> EncoderParams:
    """Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)); zero biases."""
    dims = [input_dim, *spec.hidden_dims, spec.embed_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    bound = np.sqrt(6.0 / (spec.embed_dim + num_classes))
    classifier = rng.uniform(-bound, bound, size=(num_classes, spec.embed_dim))
    return EncoderParams(weights=weights, biases=biases, classifier=classifier)


@dataclass
class _ForwardCache:
    layer_inputs: list[np.ndarray]  # activation entering each layer
    relu_masks: list[np.ndarray]  # one per hidden activation
    pre: np.ndarray  # (B, d) pre-normalization features
    norms: np.ndarray  # (B,) row norms actually divided by
    embeddings: np.ndarray  # (B, d) unit rows
    logits: np.ndarray  # (B, C)


def _forward_full(params: EncoderParams, inputs: np.ndarray) -> _ForwardCache:
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.weights[0].shape[0]:
        raise ShapeMismatch(
            f"inputs {X.shape} incompatible with first layer {params.weights[0].shape}"
        )
    layer_inputs, relu_masks = [], []
    A = X
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        layer_inputs.append(A)
        Z = A @ W + b
        if l < last:
            mask = Z > 0.0
            relu_masks.append(mask)
            A = np.where(mask, Z, 0.0)
        else:
            A = Z
    pre = A
    norms = np.linalg.norm(pre, axis=1)
    if (norms <= ZERO_NORM_EPS).any():
        raise DegenerateEmbedding(
            f"pre-embedding row {int(np.flatnonzero(norms <= ZERO_NORM_EPS)[0])} "
            "has zero norm"
        )
    norms = np.where(np.abs(norms - 1.0) <= UNIT_SNAP_TOL, 1.0, norms)
    embeddings = pre / norms[:, None]
    logits = pre @ params.classifier.T
    return _ForwardCache(
        layer_inputs=layer_inputs,
        relu_masks=relu_masks,
        pre=pre,
        norms=norms,
        embeddings=embeddings,
        logits=logits,
    )


def forward(params: EncoderParams, inputs: np.ndarray):
    """Run the encoder; returns (pre_norm, embeddings, logits)."""
    cache = _forward_full(params, inputs)
    return cache.pre, cache.embeddings, cache.logits


def _backward_view(params, cache, d_emb, d_logits, grads):
    """Push embedding/logit gradients of one view into parameter grads."""
    # d/d pre of pre/||pre||: project out the radial component, then scale.
    radial = np.sum(d_emb * cache.embeddings, axis=1, keepdims=True)
    g = (d_emb - radial * cache.embeddings) / cache.norms[:, None]
    if d_logits is not None:
        grads.classifier += d_logits.T @ cache.pre
        g = g + d_logits @ params.classifier
    for l in range(len(params.weights) - 1, -1, -1):
        grads.weights[l] += cache.layer_inputs[l].T @ g
        grads.biases[l] += g.sum(axis=0)
        if l > 0:
            g = (g @ params.weights[l].T) * cache.relu_masks[l - 1]


@dataclass(frozen=True)
class ObjectiveConfig:
    """Which loss terms are active and with what hyperparameters."""

    mode: str = "bau"  # "bau" or "baseline"
    use_ce: bool = True
    use_triplet: bool = True
    use_align: bool = True
    use_uniform: bool = True
    use_domain: bool = True
    weighting: bool = True
    domain_specific: bool = True
    lambda_align: float = 1.5
    margin: float = 0.3
    k: int = 10
    nnear: int | str = "batch"  # "batch" = original-view row count


@dataclass
class GradResult:
    grads: EncoderParams
    bundle: LossBundle
    orig_embeddings: np.ndarray
    aug_embeddings: np.ndarray
    pair_set: PositivePairSet | None


def grad_total(
    params: EncoderParams, batch, bank: PrototypeBank | None, hyper: ObjectiveConfig
) -> GradResult:
    """Exact gradients of the full objective w.r.t. every parameter.

    In "bau" mode the cross-entropy and triplet terms consume only the
    original view; the regularizers couple both views. In "baseline" mode
    the standard pipeline applies cross-entropy + triplet to the stream
    actually fed to it: the augmented view, which is bit-identical to the
    original whenever the augmentation draw does not fire. No regularizer
    is applied.
    """
    fo = _forward_full(params, batch.orig_inputs)
    fa = _forward_full(params, batch.aug_inputs)
    y = np.asarray(batch.labels)
    d_emb_o = np.zeros_like(fo.embeddings)
    d_emb_a = np.zeros_like(fa.embeddings)
    d_log_o = None
    d_log_a = None
    ce = tri = align = unif = dom = 0.0
    pair_set = None

    if hyper.mode == "baseline":
        ce, d_log_a = cross_entropy_with_grad(fa.logits, y)
        tri, ha = batch_hard_triplet_with_grad(fa.embeddings, y, hyper.margin)
        d_emb_a += ha
    elif hyper.mode == "bau":
        if hyper.use_ce:
            ce, d_log_o = cross_entropy_with_grad(fo.logits, y)
        if hyper.use_triplet:
            tri, h = batch_hard_triplet_with_grad(fo.embeddings, y, hyper.margin)
            d_emb_o += h
        if hyper.use_align:
            if hyper.weighting:
                pair_set = pair_weights(fo.embeddings, fa.embeddings, y, hyper.k)
            else:
                pair_set = uniform_pair_set(y)
            align, go, ga = weighted_alignment_with_grad(
                fo.embeddings, fa.embeddings, pair_set
            )
            d_emb_o += hyper.lambda_align * go
            d_emb_a += hyper.lambda_align * ga
        if hyper.use_uniform:
            unif, go, ga = uniformity_with_grad(fo.embeddings, fa.embeddings)
            d_emb_o += go
            d_emb_a += ga
        if hyper.use_domain:
            nnear = y.shape[0] if hyper.nnear == "batch" else int(hyper.nnear)
            dom, go, ga = domain_uniformity_with_grad(
                fo.embeddings,
                fa.embeddings,
                y,
                batch.domains,
                bank,
                nnear,
                hyper.domain_specific,
            )
            d_emb_o += go
            d_emb_a += ga
        # Supervised terms must never see the augmented view in this mode.
        assert d_log_a is None
    else:
        raise ShapeMismatch(f"unknown objective mode {hyper.mode!r}")

    bundle = total_objective(ce, tri, align, unif, dom, hyper.lambda_align)
    grads = params.zeros_like()
    _backward_view(params, fo, d_emb_o, d_log_o, grads)
    _backward_view(params, fa, d_emb_a, d_log_a, grads)
    return GradResult(
        grads=grads,
        bundle=bundle,
        orig_embeddings=fo.embeddings,
        aug_embeddings=fa.embeddings,
        pair_set=pair_set,
    )


# ---------------------------------------------------------------------------
# finite-difference verification


def central_difference(f, x: np.ndarray, step: float) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64).copy()
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        f_plus = f(x)
        flat[i] = keep - step
        f_minus = f(x)
        flat[i] = keep
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return g


@dataclass(frozen=True)
class FdBlockReport:
    name: str
    max_rel_error: float
    worst_coord: tuple[int, ...]
    analytic: float
    numeric: float


@dataclass
class FdReport:
    blocks: list[FdBlockReport] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    def passed(self, threshold: float = 1e-4) -> bool:
        return self.max_rel_error <= threshold

    def format(self) -> str:
        lines = []
        for b in self.blocks:
            lines.append(
                f"{b.name:<14s} max_rel_err={b.max_rel_error:.3e} "
                f"at {b.worst_coord} analytic={b.analytic:+.6e} "
                f"numeric={b.numeric:+.6e}"
            )
        lines.append(f"overall max_rel_err={self.max_rel_error:.3e}")
        return "\n".join(lines)


def fd_check(
    params: EncoderParams,
    batch,
    bank: PrototypeBank | None,
    hyper: ObjectiveConfig,
    step: float = 1e-5,
) -> FdReport:
    """Compare analytic gradients against central differences.

    Relative error per coordinate uses max(|analytic|, |numeric|, 1e-8)
    as the denominator; the report carries the worst coordinate of each
    parameter block.
    """
    if not FD_STEP_MIN <= step <= FD_STEP_MAX:
        raise StepOutOfRange(step)
    analytic = grad_total(params, batch, bank, hyper).grads
    work = params.copy()
    report = FdReport()
    for (name, arr), (_, g_arr) in zip(work.blocks(), analytic.blocks()):
        flat = arr.ravel()
        worst = (0.0, (0,), 0.0, 0.0)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            f_plus = grad_total(work, batch, bank, hyper).bundle.total
            flat[i] = keep - step
            f_minus = grad_total(work, batch, bank, hyper).bundle.total
            flat[i] = keep
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(g_arr.ravel()[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel >= worst[0]:
                worst = (rel, np.unravel_index(i, arr.shape), a, numeric)
        report.blocks.append(
            FdBlockReport(
                name=name,
                max_rel_error=worst[0],
                worst_coord=tuple(int(c) for c in worst[1]),
                analytic=worst[2],
                numeric=worst[3],
            )
        )
    return report


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """Adaptive-moment accumulators plus the learning-rate schedule."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int
    base_lr: float
    warmup_epochs: int
    milestones: tuple[int, ...]
    decay_factor: float
    epoch: int = 0


def init_optimizer(
    params: EncoderParams,
    base_lr: float,
    warmup_epochs: int,
    milestones: tuple[int, ...],
    decay_factor: float = 0.1,
) -> OptimizerState:
    shapes = [arr for _, arr in params.blocks()]
    return OptimizerState(
        m=[np.zeros_like(a) for a in shapes],
        v=[np.zeros_like(a) for a in shapes],
        step=0,
        base_lr=float(base_lr),
        warmup_epochs=int(warmup_epochs),
        milestones=tuple(int(m) for m in milestones),
        decay_factor=float(decay_factor),
    )


def schedule_factor(
    epoch: int, warmup_epochs: int, milestones: tuple[int, ...], decay_factor: float
) -> float:
    """Linear warmup from 0.1x to 1x, then a decay step at each milestone."""
    if warmup_epochs > 0:
        ramp = WARMUP_START_FACTOR + (1.0 - WARMUP_START_FACTOR) * min(
            epoch / warmup_epochs, 1.0
        )
    else:
        ramp = 1.0
    decay = decay_factor ** sum(1 for m in milestones if epoch >= m)
    return ramp * decay


def effective_lr(state: OptimizerState) -> float:
    return state.base_lr * schedule_factor(
        state.epoch, state.warmup_epochs, state.milestones, state.decay_factor
    )


def opt_step(
    params: EncoderParams, grads: EncoderParams, state: OptimizerState
) -> tuple[EncoderParams, OptimizerState]:
    """One bias-corrected adaptive-moment update at the scheduled rate."""
    p_blocks = list(params.blocks())
    g_blocks = list(grads.blocks())
    if len(p_blocks) != len(g_blocks) or any(
        p.shape != g.shape for (_, p), (_, g) in zip(p_blocks, g_blocks)
    ):
        raise ShapeMismatch("gradient shapes do not match parameter shapes")
    t = state.step + 1
    lr = effective_lr(state)
    new_params = params.copy()
    new_m, new_v = [], []
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for (_, p), (_, g), m, v in zip(
        new_params.blocks(), g_blocks, state.m, state.v
    ):
        m_new = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v_new = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + ADAM_EPS)
        new_m.append(m_new)
        new_v.append(v_new)
    return new_params, replace(state, m=new_m, v=new_v, step=t)
