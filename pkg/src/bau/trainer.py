"""Training orchestration: full runs, ablations, probability sweeps.

One iteration = PK-sample a batch, augment it, forward both views,
assemble the objective for the configured mode, take an optimizer step,
then fold the original-view embeddings into the prototype bank. Runs are
deterministic given the config: the dataset is derived from the dataset
seed alone (so different training seeds share data), while parameter
init, batch sampling and augmentation draws derive from the experiment
seed.

"baseline" mode is the standard pipeline: cross-entropy + batch-hard
triplet on the stream of original-and-augmented inputs (the augmented
view; equal to the original whenever the augmentation draw does not
fire) and no regularizers. "bau" mode applies the supervised terms to
originals only and adds the alignment / uniformity / domain-uniformity
regularizers per its flags.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .bank import PrototypeBank, init_bank, momentum_update
from .errors import InvalidSpec, NonFiniteComponent, UnknownConfigKey
from .evalmetrics import REPORT_COLUMNS, REPORT_SCHEMA, RetrievalReport, evaluate
from .io import write_csv
from .losses import LossBundle, total_objective
from .nn import (
    EncoderParams,
    ModelSpec,
    ObjectiveConfig,
    OptimizerState,
    forward,
    grad_total,
    init_optimizer,
    init_params,
    opt_step,
)
from .synthdata import AugmentationSpec, Dataset, DatasetSpec, generate, pk_sample

HISTORY_SCHEMA = "bau.history.v1"
SWEEP_SCHEMA = "bau.sweep.v1"
ABLATE_SCHEMA = "bau.ablate.v1"

HISTORY_COLUMNS = REPORT_COLUMNS + [
    "ce",
    "triplet",
    "align",
    "uniform",
    "domain_uniform",
    "total",
    "src_mAP",
    "src_rank1",
    "src_align_diag",
    "src_uniform_diag",
    "epoch",
]
SWEEP_COLUMNS = [
    "mode",
    "p",
    "seed",
    "mAP",
    "rank1",
    "align_diag",
    "uniform_diag",
    "src_align_diag",
    "src_uniform_diag",
]
ABLATE_COLUMNS = [
    "name",
    "seed",
    "mAP",
    "rank1",
    "align_diag",
    "uniform_diag",
    "src_uniform_diag",
]


@dataclass(frozen=True)
class OptimizerSpec:
    base_lr: float = 3.5e-4
    warmup_epochs: int = 5
    milestones: tuple[int, ...] = (15, 25)
    decay_factor: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    augment: AugmentationSpec = field(default_factory=AugmentationSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    mode: str = "bau"
    align: bool = True
    weighting: bool = True
    uniform: bool = True
    domain: bool = True
    domain_specific: bool = True
    lambda_align: float = 1.5
    k: int = 10
    mu: float = 0.1
    margin: float = 0.3
    nnear: int | str = "batch"
    epochs: int = 30
    batches_per_epoch: int = 20
    num_identities: int = 12
    instances_per_identity: int = 4
    seed: int = 0
    run_id: str | None = None

    @property
    def batch_size(self) -> int:
        return self.num_identities * self.instances_per_identity

    def label(self) -> str:
        if self.run_id:
            return self.run_id
        return f"{self.mode}-p{self.augment.probability:g}-s{self.seed}"

    def validate(self) -> None:
        self.dataset.validate()
        self.augment.validate()
        if self.mode not in ("baseline", "bau"):
            raise InvalidSpec(f"mode must be 'baseline' or 'bau', got {self.mode!r}")
        if self.weighting and not self.align:
            raise InvalidSpec("the weighting flag requires the align flag")
        if self.domain_specific and not self.domain:
            raise InvalidSpec("the domain_specific flag requires the domain flag")
        if not self.dataset.heldout_domain:
            raise InvalidSpec("training requires a held-out domain for evaluation")
        if self.num_identities < 2 or self.instances_per_identity < 2:
            raise InvalidSpec(
                "PK batches need >= 2 identities and >= 2 instances each"
            )
        if self.num_identities > self.dataset.num_domains * self.dataset.ids_per_domain:
            raise InvalidSpec("more identities per batch than the dataset offers")
        if self.epochs < 1 or self.batches_per_epoch < 1:
            raise InvalidSpec("epochs and batches_per_epoch must be positive")
        if self.lambda_align < 0 or self.margin < 0:
            raise InvalidSpec("lambda and margin must be non-negative")
        if not 0.0 <= self.mu <= 1.0:
            raise InvalidSpec("mu must lie in [0, 1]")
        if self.mode == "bau" and self.align and self.weighting:
            if not 1 <= self.k < self.batch_size:
                raise InvalidSpec(
                    f"k={self.k} must satisfy 1 <= k < batch size ({self.batch_size})"
                )
        if self.nnear != "batch" and (not isinstance(self.nnear, int) or self.nnear < 1):
            raise InvalidSpec("nnear must be 'batch' or a positive integer")
        if self.model.embed_dim < 2:
            raise InvalidSpec("embedding dimension must be >= 2")

    def objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(
            mode=self.mode,
            use_ce=True,
            use_triplet=True,
            use_align=self.align,
            use_uniform=self.uniform,
            use_domain=self.domain,
            weighting=self.weighting,
            domain_specific=self.domain_specific,
            lambda_align=self.lambda_align,
            margin=self.margin,
            k=self.k,
            nnear=self.nnear,
        )


def default_config() -> ExperimentConfig:
    """The shipped defaults: lambda=1.5, k=10, mu=0.1, PK batching,
    warmup plus two-milestone 10x decay, at desk scale."""
    return ExperimentConfig()


def config_for_mode(base: ExperimentConfig, mode: str) -> ExperimentConfig:
    """Same experiment with the objective switched between modes."""
    if mode == "baseline":
        return replace(
            base,
            mode="baseline",
            align=False,
            weighting=False,
            uniform=False,
            domain=False,
            domain_specific=False,
        )
    if mode == "bau":
        return replace(base, mode="bau")
    raise InvalidSpec(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# config (de)serialization and overrides


def config_to_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["optimizer"]["milestones"] = list(config.optimizer.milestones)
    d["model"]["hidden_dims"] = list(config.model.hidden_dims)
    d["augment"]["scale_range"] = list(config.augment.scale_range)
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)

    def sub(key, cls, tuple_keys=()):
        raw = dict(d.pop(key, {}))
        for tk in tuple_keys:
            if tk in raw:
                raw[tk] = tuple(raw[tk])
        known = cls.__dataclass_fields__
        for k in raw:
            if k not in known:
                raise UnknownConfigKey(f"{key}.{k}")
        return cls(**raw)

    dataset = sub("dataset", DatasetSpec)
    augment = sub("augment", AugmentationSpec, tuple_keys=("scale_range",))
    model = sub("model", ModelSpec, tuple_keys=("hidden_dims",))
    optimizer = sub("optimizer", OptimizerSpec, tuple_keys=("milestones",))
    known = ExperimentConfig.__dataclass_fields__
    for k in d:
        if k not in known:
            raise UnknownConfigKey(k)
    return ExperimentConfig(
        dataset=dataset, augment=augment, model=model, optimizer=optimizer, **d
    )


def config_to_json(config: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(config), sort_keys=True, indent=2)


def config_from_json(text: str) -> ExperimentConfig:
    return config_from_dict(json.loads(text))


def apply_overrides(config: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``key=value`` strings with dotted keys to a config.

    Values are parsed as JSON when possible, else taken as raw strings.
    Unknown keys raise UnknownConfigKey.
    """
    d = config_to_dict(config)
    for item in overrides:
        if "=" not in item:
            raise UnknownConfigKey(item)
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise UnknownConfigKey(key)
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise UnknownConfigKey(key)
        node[parts[-1]] = value
    return config_from_dict(d)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBundle
    heldout: RetrievalReport
    source: RetrievalReport
    wall_clock: float


@dataclass
class RunHistory:
    records: list[EpochRecord] = field(default_factory=list)
    iteration_bundles: list[LossBundle] = field(default_factory=list)

    def final(self) -> EpochRecord:
        return self.records[-1]


@dataclass
class TrainResult:
    params: EncoderParams
    bank: PrototypeBank
    opt_state: OptimizerState
    history: RunHistory
    config: ExperimentConfig
    dataset: Dataset


def _source_eval_split(labels: np.ndarray):
    """First train instance of each identity is a query, the rest gallery."""
    q_idx, g_idx = [], []
    for ident in np.unique(labels):
        idxs = np.flatnonzero(labels == ident)
        q_idx.append(idxs[0])
        g_idx.extend(idxs[1:])
    return np.array(q_idx), np.array(g_idx)


def _embed(params: EncoderParams, inputs: np.ndarray) -> np.ndarray:
    return forward(params, inputs)[1]


def train(config: ExperimentConfig) -> TrainResult:
    """Run the full training loop; deterministic given the config."""
    config.validate()
    dataset = generate(config.dataset)
    num_classes = dataset.num_source_classes
    init_ss, sample_ss, aug_ss = np.random.SeedSequence(
        [config.seed, config.augment.seed]
    ).spawn(3)
    params = init_params(
        dataset.inputs.shape[1],
        config.model,
        num_classes,
        np.random.default_rng(init_ss),
    )
    tr_inputs, tr_labels, tr_domains = dataset.train_view()
    bank = init_bank(
        _embed(params, tr_inputs), tr_labels, tr_domains, config.mu, num_classes
    )
    opt = init_optimizer(
        params,
        config.optimizer.base_lr,
        config.optimizer.warmup_epochs,
        config.optimizer.milestones,
        config.optimizer.decay_factor,
    )
    hyper = config.objective()
    sample_rng = np.random.default_rng(sample_ss)
    aug_rng = np.random.default_rng(aug_ss)
    src_q, src_g = _source_eval_split(tr_labels)
    (hq, hq_labels), (hg, hg_labels) = dataset.heldout_view()

    history = RunHistory()
    iteration = 0
    for epoch in range(config.epochs):
        opt = replace(opt, epoch=epoch)
        started = time.perf_counter()
        sums = np.zeros(5)
        for _ in range(config.batches_per_epoch):
            batch = pk_sample(
                dataset,
                config.num_identities,
                config.instances_per_identity,
                sample_rng,
            )
            batch = batch.with_augmentation(config.augment, aug_rng)
            try:
                result = grad_total(params, batch, bank, hyper)
            except NonFiniteComponent as err:
                raise NonFiniteComponent(f"{err} (iteration {iteration})") from None
            params, opt = opt_step(params, result.grads, opt)
            bank = momentum_update(bank, result.orig_embeddings, batch.labels)
            sums += result.bundle.components()
            history.iteration_bundles.append(result.bundle)
            iteration += 1
        n = config.batches_per_epoch
        mean_bundle = total_objective(*(sums / n), config.lambda_align)
        tr_emb = _embed(params, tr_inputs)
        source = evaluate(tr_emb[src_q], tr_emb[src_g], tr_labels[src_q], tr_labels[src_g])
        heldout = evaluate(
            _embed(params, hq), _embed(params, hg), hq_labels, hg_labels
        )
        history.records.append(
            EpochRecord(
                epoch=epoch,
                losses=mean_bundle,
                heldout=heldout,
                source=source,
                wall_clock=time.perf_counter() - started,
            )
        )
    return TrainResult(
        params=params,
        bank=bank,
        opt_state=opt,
        history=history,
        config=config,
        dataset=dataset,
    )


# ---------------------------------------------------------------------------
# experiment suites


@dataclass(frozen=True)
class SweepRow:
    mode: str
    p: float
    seed: int
    map_score: float
    rank1: float
    align_diag: float
    uniform_diag: float
    src_align_diag: float
    src_uniform_diag: float


@dataclass(frozen=True)
class AblationRow:
    name: str
    seed: int
    map_score: float
    rank1: float
    align_diag: float
    uniform_diag: float
    src_uniform_diag: float


# Flag ladder mirroring the loss ablation plus the two strategy toggles.
DEFAULT_FLAG_SETS: tuple[tuple[str, dict], ...] = (
    ("baseline", {"mode": "baseline", "align": False, "weighting": False,
                  "uniform": False, "domain": False, "domain_specific": False}),
    ("align", {"mode": "bau", "align": True, "uniform": False, "domain": False,
               "domain_specific": False}),
    ("align+uniform", {"mode": "bau", "align": True, "uniform": True,
                       "domain": False, "domain_specific": False}),
    ("align+uniform+domain", {"mode": "bau", "align": True, "uniform": True,
                              "domain": True}),
    ("full-no-weighting", {"mode": "bau", "align": True, "weighting": False,
                           "uniform": True, "domain": True}),
    ("full-no-domain-specific", {"mode": "bau", "align": True, "uniform": True,
                                 "domain": True, "domain_specific": False}),
)


def _run_summary(config: ExperimentConfig):
    record = train(config).history.final()
    return record


def _sweep_job(args):
    mode, p, config = args
    record = _run_summary(config)
    return SweepRow(
        mode=mode,
        p=p,
        seed=config.seed,
        map_score=record.heldout.mean_ap,
        rank1=record.heldout.rank1,
        align_diag=record.heldout.alignment_diag,
        uniform_diag=record.heldout.uniformity_diag,
        src_align_diag=record.source.alignment_diag,
        src_uniform_diag=record.source.uniformity_diag,
    )


def sweep_probability(
    base_config: ExperimentConfig,
    p_values,
    modes=("baseline", "bau"),
    seeds=None,
    max_workers: int = 1,
) -> list[SweepRow]:
    """Train each (mode, p, seed) combination and summarize the last epoch.

    Duplicate probabilities are dropped (first occurrence wins). All runs
    share the dataset of ``base_config``.
    """
    ps = list(dict.fromkeys(float(p) for p in p_values))
    seeds = [base_config.seed] if seeds is None else list(seeds)
    jobs = []
    for mode in modes:
        for p in ps:
            for seed in seeds:
                cfg = config_for_mode(base_config, mode)
                cfg = replace(
                    cfg, augment=replace(cfg.augment, probability=p), seed=seed
                )
                jobs.append((mode, p, cfg))
    return _run_jobs(_sweep_job, jobs, max_workers)


def _ablate_job(args):
    name, config = args
    record = _run_summary(config)
    return AblationRow(
        name=name,
        seed=config.seed,
        map_score=record.heldout.mean_ap,
        rank1=record.heldout.rank1,
        align_diag=record.heldout.alignment_diag,
        uniform_diag=record.heldout.uniformity_diag,
        src_uniform_diag=record.source.uniformity_diag,
    )


def ablate(
    base_config: ExperimentConfig,
    flag_sets=DEFAULT_FLAG_SETS,
    seeds=None,
    max_workers: int = 1,
) -> list[AblationRow]:
    """Train every flag combination on shared data and summarize each."""
    seeds = [base_config.seed] if seeds is None else list(seeds)
    jobs = []
    for name, flags in flag_sets:
        for seed in seeds:
            cfg = replace(base_config, seed=seed, **flags)
            jobs.append((name, cfg))
    return _run_jobs(_ablate_job, jobs, max_workers)


def _run_jobs(fn, jobs, max_workers):
    if max_workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------------------
# artifact writers


def _report_cells(config: ExperimentConfig, report: RetrievalReport) -> list:
    return [
        config.label(),
        config.seed,
        float(config.augment.probability),
        float(config.lambda_align),
        config.k,
        float(config.mu),
        report.mean_ap,
        report.rank1,
        report.alignment_diag,
        report.uniformity_diag,
    ]


def write_report_csv(path, config: ExperimentConfig, report: RetrievalReport) -> None:
    write_csv(path, REPORT_SCHEMA, REPORT_COLUMNS, [_report_cells(config, report)])


def write_history_csv(path, config: ExperimentConfig, history: RunHistory) -> None:
    """One row per epoch; deliberately excludes wall-clock so reruns of the
    same config are byte-identical."""
    rows = []
    for rec in history.records:
        b = rec.losses
        rows.append(
            _report_cells(config, rec.heldout)
            + [
                b.ce,
                b.triplet,
                b.align,
                b.uniform,
                b.domain_uniform,
                b.total,
                rec.source.mean_ap,
                rec.source.rank1,
                rec.source.alignment_diag,
                rec.source.uniformity_diag,
                rec.epoch,
            ]
        )
    write_csv(path, HISTORY_SCHEMA, HISTORY_COLUMNS, rows)


def write_sweep_csv(path, rows: list[SweepRow]) -> None:
    write_csv(
        path,
        SWEEP_SCHEMA,
        SWEEP_COLUMNS,
        [
            [
                r.mode,
                r.p,
                r.seed,
                r.map_score,
                r.rank1,
                r.align_diag,
                r.uniform_diag,
                r.src_align_diag,
                r.src_uniform_diag,
            ]
            for r in rows
        ],
    )


def write_ablate_csv(path, rows: list[AblationRow]) -> None:
    write_csv(
        path,
        ABLATE_SCHEMA,
        ABLATE_COLUMNS,
        [
            [
                r.name,
                r.seed,
                r.map_score,
                r.rank1,
                r.align_diag,
                r.uniform_diag,
                r.src_uniform_diag,
            ]
            for r in rows
        ],
    )
