"""Command-line entry point: synth | shapes | train | eval | bench | downstream.

Flag precedence: command-line flags override the optional JSON config file,
which overrides built-in defaults; the seed additionally honors the
TRACTSHAPE_SEED environment variable (flag > env > file > default). The
effective configuration is echoed to stderr and written next to every output.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from . import __version__, reporting
from .errors import (
    CheckpointMismatch,
    DegenerateInput,
    GridTooLarge,
    InvalidSpec,
    IoFailure,
    NonFiniteLoss,
    NonFiniteValue,
    SchemaError,
    ShapeMismatch,
    TckError,
    TooFewRows,
    TooFewSubjects,
    ZeroVariance,
)
from .geometry import MEASURE_NAMES
from .lasso import downstream_eval, feature_matrix, synthesize_scores
from .network import load_checkpoint, save_checkpoint
from .sampling import DEFAULT_N_POINTS
from .synth import generate_dataset
from .tckio import read_manifest, read_shape_csv, read_tck, write_shape_csv
from .training import (
    TrainConfig,
    bench,
    desk_config,
    evaluate,
    predictions_for,
    split_dataset,
    train,
)
from .voxel import DEFAULT_VOXEL_SIZE, compute_shape_vector

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERIC_EXIT = 3

DATA_ERRORS = (TckError, SchemaError, IoFailure, InvalidSpec, GridTooLarge,
               DegenerateInput, CheckpointMismatch, TooFewSubjects, TooFewRows,
               FileNotFoundError, KeyError, ValueError)
NUMERIC_ERRORS = (NonFiniteLoss, NonFiniteValue, ZeroVariance, ShapeMismatch)


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _resolve(args, config_file: dict, key: str, default):
    """flag > config file > default (flags left at None mean 'not given')."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    if key in config_file:
        return config_file[key]
    return default


def _resolve_seed(args, config_file: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("TRACTSHAPE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SchemaError(f"TRACTSHAPE_SEED must be an integer, got {env!r}")
    return int(config_file.get("seed", 42))


def _load_config_file(args) -> dict:
    path = getattr(args, "config", None)
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: config file must be a JSON object")
    return doc


def _echo(effective: dict) -> None:
    print(f"tractshape {__version__} config: {json.dumps(effective, sort_keys=True)}",
          file=sys.stderr)


def build_parser() -> CliParser:
    parser = CliParser(prog="tractshape",
                       description="Fiber-cluster shape measures: voxel oracle and "
                                   "learned point-cloud regressor.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (default 42; env TRACTSHAPE_SEED overrides default)")
        p.add_argument("--config", default=None, help="JSON config file merged under flags")
        p.add_argument("--threads", type=int, default=None,
                       help="parallelism for per-cluster stages (default: cpu count)")

    p = sub.add_parser("synth", help="generate a synthetic TCK dataset + manifest")
    common(p)
    p.add_argument("--subjects", type=int, default=None)
    p.add_argument("--clusters-per-subject", type=int, default=None)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("shapes", help="compute oracle shape measures to CSV")
    common(p)
    p.add_argument("--input", required=True, help="a .tck file or a manifest .json")
    p.add_argument("--voxel-size", type=float, default=None)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("train", help="train the point-cloud shape regressor")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--shapes", required=True, help="ground-truth shape CSV")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--desk", action="store_true",
                   help="desk-scale preset (batch 16, 50 epochs) instead of the full recipe")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--lr-step", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--n-points", type=int, default=None)
    p.add_argument("--split-fraction", type=float, default=None)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--shapes", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("bench", help="per-cluster runtime: neural predict vs voxel oracle")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--voxel-size", type=float, default=None)
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--max-clusters", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("downstream", help="LASSO subject-score prediction from shape features")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--shapes", required=True, help="oracle shape CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-plots", action="store_true")
    return parser


# --- subcommand bodies ----------------------------------------------------------


def cmd_synth(args, cfg_file) -> int:
    seed = _resolve_seed(args, cfg_file)
    subjects = int(_resolve(args, cfg_file, "subjects", 10))
    cps = int(_resolve(args, cfg_file, "clusters_per_subject", 73))
    effective = {"command": "synth", "subjects": subjects, "clusters_per_subject": cps,
                 "seed": seed, "out_dir": args.out_dir}
    _echo(effective)
    manifest_path = generate_dataset(args.out_dir, subjects, cps, seed)
    reporting.write_meta(manifest_path, effective)
    print(manifest_path)
    return 0


def cmd_shapes(args, cfg_file) -> int:
    seed = _resolve_seed(args, cfg_file)
    voxel_size = float(_resolve(args, cfg_file, "voxel_size", DEFAULT_VOXEL_SIZE))
    threads = int(_resolve(args, cfg_file, "threads", os.cpu_count() or 1))
    effective = {"command": "shapes", "input": args.input, "voxel_size": voxel_size,
                 "threads": threads, "seed": seed, "out": args.out}
    _echo(effective)
    if not os.path.exists(args.input):
        raise FileNotFoundError(f"input does not exist: {args.input}")

    if args.input.endswith(".json"):
        manifest = read_manifest(args.input)
        items = [(s.subject_id, c.cluster_id, manifest.cluster_path(c))
                 for s, c in manifest.iter_clusters()]
    else:
        items = [("", None, args.input)]

    def one(item):
        sid, cid, path = item
        cluster = read_tck(path, cluster_id=cid, subject_id=sid)
        return (sid, cluster.id, compute_shape_vector(cluster, voxel_size))

    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, items))
    else:
        rows = [one(it) for it in items]
    rows.sort(key=lambda r: (r[0], r[1]))
    write_shape_csv(rows, args.out)
    reporting.write_meta(args.out, effective)
    return 0


def _train_config(args, cfg_file) -> TrainConfig:
    seed = _resolve_seed(args, cfg_file)
    base = desk_config() if args.desk else TrainConfig()
    fields = ["batch_size", "epochs", "lr", "weight_decay", "gamma", "lr_step",
              "alpha", "n_points", "split_fraction"]
    kwargs = {f: _resolve(args, cfg_file, f, getattr(base, f)) for f in fields}
    return TrainConfig(seed=seed, **kwargs)


def cmd_train(args, cfg_file) -> int:
    config = _train_config(args, cfg_file)
    effective = {"command": "train", **asdict(config), "manifest": args.manifest,
                 "shapes": args.shapes, "out_dir": args.out_dir}
    _echo(effective)
    manifest = read_manifest(args.manifest)
    shapes = read_shape_csv(args.shapes)
    os.makedirs(args.out_dir, exist_ok=True)

    def progress(row):
        print(f"epoch {row['epoch']:4d}  lr {row['lr']:.2e}  "
              f"L1 {row['l1']:.4f}  L2 {row['l2']:.4f}  "
              f"L_SF {row['lsf']:.4f}  total {row['total']:.4f}", file=sys.stderr)

    ckpt, history = train(config, manifest, shapes, progress=progress)
    ckpt_path = os.path.join(args.out_dir, "checkpoint.tsn")
    save_checkpoint(ckpt, ckpt_path)
    hist_path = os.path.join(args.out_dir, "history.csv")
    reporting.save_history_csv(history, hist_path, effective)
    if not args.no_plots:
        reporting.plot_history(history, os.path.join(args.out_dir, "history.png"))
    print(ckpt_path)
    return 0


def cmd_eval(args, cfg_file) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    shapes = read_shape_csv(args.shapes)
    seed = args.seed if args.seed is not None else ckpt.seed
    fraction = float(ckpt.train_config.get("split_fraction", 0.8))
    split_seed = int(ckpt.train_config.get("seed", ckpt.seed))
    effective = {"command": "eval", "checkpoint": args.checkpoint, "seed": seed,
                 "split_fraction": fraction, "split_seed": split_seed,
                 "manifest": args.manifest, "shapes": args.shapes, "out_dir": args.out_dir}
    _echo(effective)
    _, test_ids = split_dataset(manifest, fraction, split_seed)
    os.makedirs(args.out_dir, exist_ok=True)

    report = evaluate(ckpt, manifest, test_ids, shapes, seed=seed)
    csv_path = os.path.join(args.out_dir, "metrics.csv")
    reporting.save_metrics_report(report, csv_path, effective)
    print(reporting.text_table(["measure", "r", "nmse", "note"],
                               reporting.metrics_rows(report)))
    if not args.no_plots:
        keys, preds = predictions_for(ckpt, manifest, test_ids, seed)
        gts = np.array([shapes[k].as_array() for k in keys])
        reporting.plot_pred_vs_truth(preds, gts,
                                     os.path.join(args.out_dir, "pred_vs_oracle.png"))
    return 0


def cmd_bench(args, cfg_file) -> int:
    seed = _resolve_seed(args, cfg_file)
    voxel_size = float(_resolve(args, cfg_file, "voxel_size", DEFAULT_VOXEL_SIZE))
    repetitions = int(_resolve(args, cfg_file, "repetitions", 10))
    warmup = int(_resolve(args, cfg_file, "warmup", 1))
    effective = {"command": "bench", "checkpoint": args.checkpoint,
                 "voxel_size": voxel_size, "repetitions": repetitions,
                 "warmup": warmup, "seed": seed, "out_dir": args.out_dir}
    _echo(effective)
    ckpt = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    items = list(manifest.iter_clusters())
    if args.max_clusters is not None:
        items = items[: args.max_clusters]
    clusters = {(s.subject_id, c.cluster_id):
                read_tck(manifest.cluster_path(c), cluster_id=c.cluster_id,
                         subject_id=s.subject_id)
                for s, c in items}
    results = bench(ckpt, clusters, voxel_size, repetitions, warmup, seed)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "bench.csv")
    reporting.write_csv(csv_path, ["method", "mean_ms", "std_ms", "n_timings"],
                        [[r.method, f"{r.mean_ms:.6g}", f"{r.std_ms:.6g}", r.n_timings]
                         for r in results])
    reporting.write_meta(csv_path, effective)
    detail_path = os.path.join(args.out_dir, "bench_per_cluster.csv")
    reporting.write_csv(detail_path,
                        ["method", "subject_id", "cluster_id", "n_streamlines", "mean_ms"],
                        [[r.method, k[0], k[1], n, f"{ms:.6g}"]
                         for r in results for k, n, ms in r.per_cluster])
    reporting.write_meta(detail_path, effective)
    print(reporting.text_table(["method", "mean ms", "std ms"],
                               [[r.method, f"{r.mean_ms:.4g}", f"{r.std_ms:.4g}"]
                                for r in results]))
    if not args.no_plots:
        reporting.plot_bench(results, os.path.join(args.out_dir, "bench.png"))
    return 0


def cmd_downstream(args, cfg_file) -> int:
    seed = _resolve_seed(args, cfg_file)
    effective = {"command": "downstream", "manifest": args.manifest,
                 "shapes": args.shapes, "checkpoint": args.checkpoint,
                 "seed": seed, "out_dir": args.out_dir}
    _echo(effective)
    manifest = read_manifest(args.manifest)
    oracle_shapes = read_shape_csv(args.shapes)
    ckpt = load_checkpoint(args.checkpoint)

    subject_ids = sorted(s.subject_id for s in manifest.subjects)
    cluster_sets = {s.subject_id: sorted(c.cluster_id for c in s.clusters)
                    for s in manifest.subjects}
    cluster_ids = cluster_sets[subject_ids[0]]
    for sid, cids in cluster_sets.items():
        if cids != cluster_ids:
            raise SchemaError(f"subject {sid} has a different cluster set")

    oracle_feats = feature_matrix(oracle_shapes, subject_ids, cluster_ids)

    keys, preds = predictions_for(ckpt, manifest, subject_ids, seed)
    model_feats = np.zeros((len(subject_ids), len(cluster_ids) * 5))
    key_index = {k: i for i, k in enumerate(keys)}
    for si, sid in enumerate(subject_ids):
        for ci, cid in enumerate(cluster_ids):
            model_feats[si, ci * 5:(ci + 1) * 5] = preds[key_index[(sid, cid)]]

    manifest_scores = [s.score for s in sorted(manifest.subjects, key=lambda s: s.subject_id)]
    if all(v is not None for v in manifest_scores):
        scores = np.array(manifest_scores, dtype=np.float64)
        score_source = "manifest"
    else:
        scores = synthesize_scores(oracle_feats, seed)
        score_source = "synthetic"

    os.makedirs(args.out_dir, exist_ok=True)
    results = [downstream_eval(oracle_feats, scores, seed=seed, source="oracle"),
               downstream_eval(model_feats, scores, seed=seed, source="model")]
    csv_path = os.path.join(args.out_dir, "downstream.csv")
    reporting.write_csv(csv_path, ["feature_source", "r", "chosen_lambda", "n_nonzero"],
                        [[r.feature_source, f"{r.r:.6g}", f"{r.chosen_lambda:.6g}",
                          r.n_nonzero] for r in results])
    reporting.write_meta(csv_path, {**effective, "score_source": score_source})
    with open(os.path.join(args.out_dir, "scores.json"), "w", encoding="utf-8") as f:
        json.dump({"score_source": score_source,
                   "scores": {sid: float(v) for sid, v in zip(subject_ids, scores)}},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    print(reporting.text_table(["feature_source", "r", "lambda", "n_nonzero"],
                               [[r.feature_source, f"{r.r:.4g}", f"{r.chosen_lambda:.4g}",
                                 r.n_nonzero] for r in results]))
    if not args.no_plots:
        reporting.plot_downstream(results, os.path.join(args.out_dir, "downstream.png"))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "shapes": cmd_shapes,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "downstream": cmd_downstream,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 0
    try:
        cfg_file = _load_config_file(args)
        return COMMANDS[args.command](args, cfg_file)
    except NUMERIC_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return NUMERIC_EXIT
    except DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
