"""Artifact I/O: atomic writes, delimited files, checkpoints.

Every artifact is written to a temporary file in the target directory and
renamed into place, so a crashed run never leaves a partial file behind.
CSV files start with a ``# schema=...`` comment line naming their format
version.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from contextlib import contextmanager

import numpy as np

from .bank import PrototypeBank
from .nn import EncoderParams, OptimizerState

CHECKPOINT_FORMAT = "bau.checkpoint.v1"


def _mkstemp_for(path: str):
    """Temp file in the target directory with umask-standard permissions
    (mkstemp defaults to 0600, which would stick after the rename)."""
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    umask = os.umask(0)
    os.umask(umask)
    os.fchmod(fd, 0o666 & ~umask)
    return fd, tmp


@contextmanager
def atomic_write(path: str | os.PathLike, mode: str = "w"):
    """Open a temp file next to ``path`` and rename it over on success."""
    path = os.fspath(path)
    fd, tmp = _mkstemp_for(path)
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def fmt_float(x: float) -> str:
    """Shortest round-trip decimal form; deterministic for equal doubles."""
    return repr(float(x))


def write_csv(path, schema: str, header: list[str], rows) -> None:
    """Write a schema-tagged CSV atomically; floats via :func:`fmt_float`."""
    with atomic_write(path) as fh:
        fh.write(f"# schema={schema}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [
                fmt_float(c) if isinstance(c, (float, np.floating)) else str(c)
                for c in row
            ]
            fh.write(",".join(cells) + "\n")


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    """Read a schema-tagged CSV; returns (schema, header, rows-of-strings)."""
    with open(path) as fh:
        first = fh.readline().strip()
        schema = first.removeprefix("# schema=") if first.startswith("#") else ""
        header_line = fh.readline() if first.startswith("#") else first
        header = header_line.strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return schema, header, rows


def config_hash(config_json: str) -> str:
    return hashlib.sha256(config_json.encode()).hexdigest()[:16]


def save_checkpoint(
    path,
    params: EncoderParams,
    bank: PrototypeBank,
    opt_state: OptimizerState,
    config_json: str,
    epoch: int,
) -> None:
    """Versioned npz container with params, bank, optimizer and config."""
    arrays: dict[str, np.ndarray] = {}
    for name, arr in params.blocks():
        arrays[f"param:{name}"] = arr
    for (name, _), m, v in zip(params.blocks(), opt_state.m, opt_state.v):
        arrays[f"opt_m:{name}"] = m
        arrays[f"opt_v:{name}"] = v
    arrays["bank:prototypes"] = bank.prototypes
    arrays["bank:class_domain"] = bank.class_domain
    meta = {
        "format": CHECKPOINT_FORMAT,
        "epoch": int(epoch),
        "config": json.loads(config_json),
        "config_hash": config_hash(config_json),
        "bank_mu": bank.mu,
        "opt": {
            "step": opt_state.step,
            "base_lr": opt_state.base_lr,
            "warmup_epochs": opt_state.warmup_epochs,
            "milestones": list(opt_state.milestones),
            "decay_factor": opt_state.decay_factor,
            "epoch": opt_state.epoch,
        },
        "num_layers": len(params.weights),
    }
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
    )
    path = os.fspath(path)
    fd, tmp = _mkstemp_for(path)
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`.

    Returns (params, bank, opt_state, meta) where meta carries the config
    dict, its hash and the epoch count.
    """
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"]).decode())
        n_layers = meta["num_layers"]
        params = EncoderParams(
            weights=[data[f"param:layers.{l}.W"] for l in range(n_layers)],
            biases=[data[f"param:layers.{l}.b"] for l in range(n_layers)],
            classifier=data["param:classifier"],
        )
        names = [name for name, _ in params.blocks()]
        opt_meta = meta["opt"]
        opt_state = OptimizerState(
            m=[data[f"opt_m:{n}"] for n in names],
            v=[data[f"opt_v:{n}"] for n in names],
            step=opt_meta["step"],
            base_lr=opt_meta["base_lr"],
            warmup_epochs=opt_meta["warmup_epochs"],
            milestones=tuple(opt_meta["milestones"]),
            decay_factor=opt_meta["decay_factor"],
            epoch=opt_meta["epoch"],
        )
        bank = PrototypeBank(
            prototypes=data["bank:prototypes"],
            class_domain=data["bank:class_domain"],
            mu=meta["bank_mu"],
        )
    return params, bank, opt_state, meta
