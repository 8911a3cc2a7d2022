"""Command-line entry point.

Subcommands::

    bau gen-data   write the synthetic dataset CSV
    bau train      run one training job; checkpoint + history CSV
    bau eval       re-evaluate a checkpoint on its held-out domain
    bau ablate     run the flag-combination ladder; CSV + SVG chart
    bau sweep      sweep augmentation probabilities; CSV + SVG chart
    bau fd-check   verify analytic gradients against finite differences

Every command takes ``--config FILE`` (JSON; omitted = shipped defaults)
and repeatable ``--set key=value`` overrides with dotted keys. Exit codes:
0 ok, 1 config error, 2 runtime failure (non-finite loss), 3 gradient
check failed. ``BAU_THREADS`` caps process parallelism for sweep/ablate
(default 1, fully serial and deterministic).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bank import init_bank
from .errors import BauError, ConfigError, NonFiniteComponent, StepOutOfRange
from .evalmetrics import evaluate
from .io import load_checkpoint, save_checkpoint
from .nn import fd_check, forward, init_params
from .synthdata import generate, pk_sample, save_dataset_csv
from .trainer import (
    ablate,
    apply_overrides,
    config_from_dict,
    config_from_json,
    config_to_json,
    default_config,
    sweep_probability,
    train,
    write_ablate_csv,
    write_history_csv,
    write_report_csv,
    write_sweep_csv,
)

FD_THRESHOLD = 1e-4


def _load_config(args):
    if args.config:
        try:
            with open(args.config) as fh:
                config = config_from_json(fh.read())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot load config {args.config}: {err}") from None
    else:
        config = default_config()
    if args.set:
        config = apply_overrides(config, args.set)
    config.validate()
    return config


def _max_workers() -> int:
    return max(1, int(os.environ.get("BAU_THREADS", "1")))


def _cmd_gen_data(args) -> int:
    config = _load_config(args)
    dataset = generate(config.dataset)
    path = os.path.join(args.out, "dataset.csv")
    save_dataset_csv(dataset, path)
    print(f"wrote {path} ({dataset.inputs.shape[0]} rows)")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args)
    result = train(config)
    label = config.label()
    ckpt = os.path.join(args.out, f"{label}.ckpt.npz")
    hist = os.path.join(args.out, f"{label}.history.csv")
    save_checkpoint(
        ckpt,
        result.params,
        result.bank,
        result.opt_state,
        config_to_json(config),
        config.epochs,
    )
    write_history_csv(hist, config, result.history)
    final = result.history.final()
    print(
        f"wrote {ckpt} and {hist}; final held-out "
        f"mAP={final.heldout.mean_ap:.4f} rank1={final.heldout.rank1:.4f}"
    )
    return 0


def _cmd_eval(args) -> int:
    try:
        params, _, _, meta = load_checkpoint(args.checkpoint)
    except (OSError, KeyError) as err:
        raise ConfigError(f"cannot load checkpoint {args.checkpoint}: {err}") from None
    config = config_from_dict(meta["config"])
    if args.set:
        config = apply_overrides(config, args.set)
    config.validate()
    dataset = generate(config.dataset)
    (hq, hq_labels), (hg, hg_labels) = dataset.heldout_view()
    report = evaluate(
        forward(params, hq)[1], forward(params, hg)[1], hq_labels, hg_labels
    )
    path = os.path.join(args.out, f"{config.label()}.report.csv")
    write_report_csv(path, config, report)
    print(
        f"wrote {path}; mAP={report.mean_ap:.4f} rank1={report.rank1:.4f} "
        f"({report.num_skipped} queries skipped)"
    )
    return 0


def _cmd_ablate(args) -> int:
    config = _load_config(args)
    seeds = _parse_int_list(args.seeds) if args.seeds else None
    rows = ablate(config, seeds=seeds, max_workers=_max_workers())
    csv_path = os.path.join(args.out, "ablate.csv")
    svg_path = os.path.join(args.out, "ablate.svg")
    write_ablate_csv(csv_path, rows)
    from .plots import render_ablate_chart

    render_ablate_chart(rows, svg_path)
    print(f"wrote {csv_path} and {svg_path} ({len(rows)} rows)")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    p_values = [float(x) for x in args.p.split(",") if x != ""]
    modes = [m for m in args.modes.split(",") if m]
    seeds = _parse_int_list(args.seeds) if args.seeds else None
    rows = sweep_probability(
        config, p_values, modes=modes, seeds=seeds, max_workers=_max_workers()
    )
    csv_path = os.path.join(args.out, "sweep.csv")
    svg_path = os.path.join(args.out, "sweep.svg")
    write_sweep_csv(csv_path, rows)
    from .plots import render_sweep_chart

    render_sweep_chart(rows, svg_path)
    print(f"wrote {csv_path} and {svg_path} ({len(rows)} rows)")
    return 0


def _cmd_fd_check(args) -> int:
    config = _load_config(args)
    dataset = generate(config.dataset)
    init_ss, sample_ss, aug_ss = np.random.SeedSequence(
        [config.seed, config.augment.seed]
    ).spawn(3)
    params = init_params(
        dataset.inputs.shape[1],
        config.model,
        dataset.num_source_classes,
        np.random.default_rng(init_ss),
    )
    tr_inputs, tr_labels, tr_domains = dataset.train_view()
    bank = init_bank(
        forward(params, tr_inputs)[1],
        tr_labels,
        tr_domains,
        config.mu,
        dataset.num_source_classes,
    )
    batch = pk_sample(
        dataset,
        config.num_identities,
        config.instances_per_identity,
        np.random.default_rng(sample_ss),
    ).with_augmentation(config.augment, np.random.default_rng(aug_ss))
    report = fd_check(params, batch, bank, config.objective(), step=args.step)
    print(report.format())
    if not report.passed(FD_THRESHOLD):
        print(f"FAIL: max relative error exceeds {FD_THRESHOLD:g}")
        return 3
    print(f"OK: all gradients within {FD_THRESHOLD:g} of finite differences")
    return 0


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bau", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="JSON config file (default: shipped defaults)")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (dotted path), repeatable",
        )
        if out:
            p.add_argument("--out", default="bau-out", help="output directory")

    common(sub.add_parser("gen-data", help="write the dataset CSV"))
    common(sub.add_parser("train", help="train one configuration"))

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    common(p_eval)

    p_ablate = sub.add_parser("ablate", help="run the flag-combination ladder")
    common(p_ablate)
    p_ablate.add_argument("--seeds", help="comma-separated seeds (default: config seed)")

    p_sweep = sub.add_parser("sweep", help="sweep augmentation probabilities")
    common(p_sweep)
    p_sweep.add_argument("--p", default="0,0.25,0.5,0.75,1.0", help="comma-separated p values")
    p_sweep.add_argument("--modes", default="baseline,bau", help="comma-separated modes")
    p_sweep.add_argument("--seeds", help="comma-separated seeds (default: config seed)")

    p_fd = sub.add_parser("fd-check", help="finite-difference gradient check")
    common(p_fd, out=False)
    p_fd.add_argument("--step", type=float, default=1e-5)
    return parser


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "sweep": _cmd_sweep,
    "fd-check": _cmd_fd_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, StepOutOfRange) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except NonFiniteComponent as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2
    except BauError as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
