"""Command-line interface: generate | train | cluster | evaluate | report.

Every output lands under ``--out`` with a fixed name (model.ckpt,
labels.csv, trainlog.csv, affinity.csv, metrics.json).  Input problems
exit with status 2, numerical failures with status 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_result
from .dataset import (
    FLOAT_FMT,
    DatasetError,
    SyntheticSpec,
    generate_synthetic,
    load_labels,
    load_manifest,
    save_dataset,
    save_labels,
)
from .metrics import evaluate
from .spectral import build_affinity
from .trainer import NonFiniteLossError, TrainConfig, cluster_state, train

log = logging.getLogger("mvsubspace")

# run-level keys a config file may carry next to the TrainConfig fields
RUN_KEYS = ("manifest", "out")

# CLI flag dest -> TrainConfig field
TRAIN_FLAGS = {
    "lambda1": "lambda1",
    "lambda2": "lambda2",
    "lambda3": "lambda3",
    "lambda4": "lambda4",
    "lambda1_mode": "lambda1_mode",
    "lr": "learning_rate",
    "pretrain_epochs": "pretrain_epochs",
    "finetune_epochs": "finetune_epochs",
    "seed": "seed",
    "clusters": "n_clusters",
    "widths": "widths",
    "strides": "strides",
    "eval_every": "eval_every",
    "kmeans_restarts": "kmeans_restarts",
    "decode_through_z": "decode_selfexpr",
}


class UsageError(Exception):
    """Bad input: reported on stderr with exit status 2."""


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _widths(text: str):
    """``8,6,4`` (shared by all views) or ``8,6,4;10,6,4`` (one list per view)."""
    groups = [_int_list(g) for g in text.split(";") if g.strip()]
    return groups[0] if len(groups) == 1 else groups


def write_matrix(path: str, M: np.ndarray) -> None:
    np.savetxt(path, M, fmt=FLOAT_FMT, delimiter=",")


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def build_config(args) -> TrainConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    values = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{args.config}: invalid JSON ({exc})")
        if not isinstance(data, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        values.update({k: v for k, v in data.items() if k not in RUN_KEYS})
    for dest, name in TRAIN_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            values[name] = value
    try:
        config = TrainConfig.from_dict(values)
        config.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}")
    return config


def _config_run_value(args, key: str) -> Optional[str]:
    if getattr(args, key, None):
        return getattr(args, key)
    if args.config and os.path.isfile(args.config):
        with open(args.config) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError:
                return None
        if isinstance(data, dict):
            return data.get(key)
    return None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    noise = args.noise[0] if len(args.noise) == 1 else args.noise
    spec = SyntheticSpec(k=args.clusters, per_cluster=args.per_cluster, views=args.views,
                         ambient_dims=args.dims, subspace_rank=args.rank, noise_sigma=noise,
                         seed=args.seed)
    try:
        spec.validate()
    except DatasetError as exc:
        raise UsageError(str(exc))
    ds = generate_synthetic(spec, name=args.name)
    path = save_dataset(ds, args.out)
    print(path)
    return 0


def cmd_train(args) -> int:
    manifest = _config_run_value(args, "manifest")
    out = _config_run_value(args, "out")
    if not manifest:
        raise UsageError("no manifest given")
    if not out:
        raise UsageError("no output directory given (--out)")
    config = build_config(args)
    try:
        ds = load_manifest(manifest)
    except (FileNotFoundError, DatasetError) as exc:
        raise UsageError(str(exc))
    if config.n_clusters is None and ds.labels is None:
        raise UsageError("dataset has no labels: pass --clusters")

    result = train(ds, config)
    if not np.all(np.isfinite(result.affinity)):
        log.error("affinity contains non-finite values")
        return 1
    os.makedirs(out, exist_ok=True)
    save_result(os.path.join(out, "model.ckpt"), result)
    save_labels(result.labels, os.path.join(out, "labels.csv"))
    result.log.write_csv(os.path.join(out, "trainlog.csv"))
    write_matrix(os.path.join(out, "affinity.csv"), result.affinity)
    if ds.labels is not None:
        report = evaluate(ds.labels, result.labels)
        with open(os.path.join(out, "metrics.json"), "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        log.info("nmi %.4f acc %.4f", report["nmi"], report["acc"])
    print(out)
    return 0


def cmd_cluster(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    except CheckpointError as exc:
        raise UsageError(str(exc))
    k = args.clusters or ckpt.n_clusters
    if not 2 <= k <= ckpt.state.n_samples:
        raise UsageError(f"--clusters must be in [2, {ckpt.state.n_samples}], got {k}")
    config = ckpt.config
    if args.seed is not None:
        config.seed = args.seed
    labels = cluster_state(ckpt.state, k, config, len(ckpt.state.Z_views))
    os.makedirs(args.out, exist_ok=True)
    save_labels(labels, os.path.join(args.out, "labels.csv"))
    print(os.path.join(args.out, "labels.csv"))
    return 0


def cmd_evaluate(args) -> int:
    try:
        truth = load_labels(args.truth)
        pred = load_labels(args.pred)
    except (FileNotFoundError, DatasetError) as exc:
        raise UsageError(str(exc))
    if truth.size != pred.size:
        raise UsageError(f"label files differ in length: {truth.size} vs {pred.size}")
    if truth.size < 2:
        raise UsageError("need at least 2 labels")
    report = evaluate(truth, pred)
    text = json.dumps(report)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.json"), "w") as fh:
            fh.write(text + "\n")
    return 0


def cmd_report(args) -> int:
    """Affinity matrices and the loss curve of a finished run, as CSV."""
    ckpt_path = os.path.join(args.run, "model.ckpt")
    try:
        ckpt = load_checkpoint(ckpt_path)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    except CheckpointError as exc:
        raise UsageError(str(exc))
    os.makedirs(args.out, exist_ok=True)
    A = build_affinity(ckpt.state.Z)
    write_matrix(os.path.join(args.out, "affinity.csv"), A)
    for i, Zi in enumerate(ckpt.state.Z_views):
        write_matrix(os.path.join(args.out, f"affinity_view{i}.csv"), build_affinity(Zi))
    labels_path = os.path.join(args.run, "labels.csv")
    if os.path.isfile(labels_path):
        # rows and columns grouped by predicted cluster, for a block-diagonal heatmap
        order = np.argsort(load_labels(labels_path), kind="stable")
        write_matrix(os.path.join(args.out, "affinity_sorted.csv"), A[np.ix_(order, order)])

    log_path = os.path.join(args.run, "trainlog.csv")
    if os.path.isfile(log_path):
        with open(log_path, newline="") as src, \
                open(os.path.join(args.out, "loss_curve.csv"), "w", newline="") as dst:
            reader = csv.DictReader(src)
            w = csv.writer(dst, lineterminator="\n")
            w.writerow(["epoch", "total"])
            for row in reader:
                w.writerow([row["epoch"], row["total"]])
    print(args.out)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvsubspace",
                                     description="Multi-view deep subspace clustering.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic union-of-subspaces dataset")
    g.add_argument("--clusters", type=int, default=3)
    g.add_argument("--per-cluster", type=int, default=20)
    g.add_argument("--views", type=int, default=2)
    g.add_argument("--dims", type=_int_list, default=[10, 12], help="ambient dimension per view")
    g.add_argument("--rank", type=int, default=2)
    g.add_argument("--noise", type=_float_list, default=[0.01],
                   help="noise sigma, one value or one per view")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name", default="synthetic")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="pretrain, fine-tune and cluster a dataset")
    t.add_argument("manifest", nargs="?", help="dataset manifest.json")
    t.add_argument("--out")
    t.add_argument("--config", help="JSON file with training options")
    t.add_argument("--lambda1", type=float)
    t.add_argument("--lambda2", type=float)
    t.add_argument("--lambda3", type=float)
    t.add_argument("--lambda4", type=float)
    t.add_argument("--lambda1-mode", choices=["fixed", "auto"])
    t.add_argument("--lr", type=float)
    t.add_argument("--pretrain-epochs", type=int)
    t.add_argument("--finetune-epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--clusters", type=int)
    t.add_argument("--widths", type=_widths, help="e.g. 8,6,4 or 8,6,4;10,6,4 per view")
    t.add_argument("--strides", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--kmeans-restarts", type=int)
    t.add_argument("--decode-through-z", action="store_const", const=True,
                   help="decoders reconstruct from F Z instead of F")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("cluster", parents=[common], help="re-run spectral clustering from a checkpoint")
    c.add_argument("checkpoint")
    c.add_argument("--clusters", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cluster)

    e = sub.add_parser("evaluate", parents=[common], help="compare two label files")
    e.add_argument("truth")
    e.add_argument("pred")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", parents=[common], help="export affinity and loss-curve CSVs of a run")
    r.add_argument("run", help="output directory of a train run")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLossError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
