"""Command-line interface for the full pipeline.

Seven subcommands: ``synth`` (generate a labeled dataset), ``voxelize``
(clouds to occupancy grids), ``train``, ``eval``, ``features`` (export the
per-filter feature tensor of one sample), ``sweep-lambda`` and ``scale``
(the two batch experiments).  Settings resolve as built-in defaults, then
``--config`` file entries, then explicit flags; every run prints the
resulting effective-config banner so it can be reproduced from the log
alone.  Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import (
    ConfigError,
    TrainConfig,
    apply_overrides,
    format_config,
    load_config_file,
)
from .data import (
    DEFAULT_NUM_POINTS,
    SYNTH_CLASSES,
    UNIT_BOUNDS,
    LabeledCloud,
    Mesh,
    load_manifest_dataset,
    parse_off,
    sample_surface,
    serialize_off,
    synth_dataset,
    write_manifest,
)
from .io import load_checkpoint, save_checkpoint, write_feature_tensor, write_voxel_grid
from .model import inter_feature_distance
from .quanv import quanvolve
from .train import (
    MetricsLog,
    evaluate_grids,
    prepare_grids,
    run_lambda_sweep,
    run_scaling_experiment,
    train,
)
from .voxel import PointCloud, normalize_bounds, voxelize

__all__ = ["main", "build_parser"]

_CONFIG_FIELDS = tuple(f.name for f in fields(TrainConfig))


class UsageError(ValueError):
    """A bad flag value or unusable input path, caught before any compute."""


# ---------------------------------------------------------------------------
# flag plumbing


def _csv_ints(text: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def _csv_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(p) for p in text.split(","))


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """Flags mirroring TrainConfig fields; unset flags fall through to the
    config file and then to the built-in defaults shown here."""
    d = TrainConfig()
    g = parser.add_argument_group("training configuration")
    g.add_argument("--config", metavar="FILE",
                   help="flat key = value settings file")
    g.add_argument("--filters", dest="num_filters", type=int, metavar="M",
                   help=f"number of filters (default {d.num_filters})")
    g.add_argument("--kernels", "--kernel", dest="kernel_sizes", type=_csv_ints,
                   metavar="K[,K...]",
                   help="kernel size per filter, or one shared size "
                        f"(default {','.join(map(str, d.kernel_sizes))})")
    g.add_argument("--lambda", dest="rf_lambda", type=float, metavar="L",
                   help=f"feature-diversity penalty weight (default {d.rf_lambda})")
    g.add_argument("--learning-rate", dest="learning_rate", type=float,
                   metavar="LR", help=f"Adam step size (default {d.learning_rate})")
    g.add_argument("--batch-size", dest="batch_size", type=int, metavar="B",
                   help=f"training batch size (default {d.batch_size})")
    g.add_argument("--eval-batch-size", dest="eval_batch_size", type=int,
                   metavar="B", help=f"inference batch size (default {d.eval_batch_size})")
    g.add_argument("--epochs", type=int, metavar="E",
                   help=f"training epochs; 0 saves an untrained model (default {d.epochs})")
    g.add_argument("--grid", dest="grid_dims", type=_csv_ints, metavar="N[,N,N]",
                   help="voxel grid dims, one number for a cube "
                        f"(default {d.grid_dims[0]})")
    g.add_argument("--threshold", type=int, metavar="T",
                   help=f"points per voxel for occupancy (default {d.threshold})")
    g.add_argument("--stride", type=int, metavar="S",
                   help=f"filter stride (default {d.stride})")
    g.add_argument("--qubits", dest="num_qubits", type=int, metavar="Q",
                   help=f"qubits per filter (default {d.num_qubits})")
    g.add_argument("--hidden-units", dest="hidden_units", type=int, metavar="H",
                   help=f"dense head width (default {d.hidden_units})")
    g.add_argument("--seed", type=int, metavar="SEED",
                   help=f"master RNG seed (default {d.seed})")
    g.add_argument("--threads", type=int, metavar="N",
                   help="worker threads (default: all cores)")


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("dataset handling")
    g.add_argument("--points", type=int, default=DEFAULT_NUM_POINTS, metavar="N",
                   help=f"surface samples per mesh (default {DEFAULT_NUM_POINTS})")
    g.add_argument("--cache", metavar="DIR",
                   help="directory for reusable voxel-grid cache files")


def _build_config(args: argparse.Namespace) -> TrainConfig:
    """defaults -> config file -> explicit flags, then validate."""
    cfg = TrainConfig(threads=os.cpu_count() or 1)
    config_path = getattr(args, "config", None)
    if config_path:
        if not Path(config_path).is_file():
            raise UsageError(f"config file not found: {config_path}")
        cfg = apply_overrides(cfg, load_config_file(config_path))
    flag_values = {
        name: getattr(args, name)
        for name in _CONFIG_FIELDS
        if getattr(args, name, None) is not None
    }
    return apply_overrides(cfg, flag_values).normalized()


def _banner(cfg: Optional[TrainConfig], **extra) -> None:
    lines = [format_config(cfg)] if cfg is not None else ["# effective-config"]
    for key in sorted(extra):
        value = extra[key]
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        lines.append(f"# {key} = {value}")
    print("\n".join(lines))


# ---------------------------------------------------------------------------
# shared input handling


def _require_file(path_text: str) -> Path:
    path = Path(path_text)
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    return path


def _cloud_from_off(path: Path, points: int,
                    rng: np.random.Generator) -> PointCloud:
    mesh = parse_off(path.read_text(encoding="utf-8"))
    if mesh.faces.shape[0]:
        pts = sample_surface(mesh, points, rng)
    else:
        pts = mesh.vertices
    return PointCloud(pts, UNIT_BOUNDS)


def _load_inputs(path_text: str, points: int, seed: int) -> List[Tuple[str, PointCloud]]:
    """An .off file is one sample; anything else is read as a manifest."""
    path = _require_file(path_text)
    if path.suffix.lower() == ".off":
        rng = np.random.default_rng(seed)
        return [(path.stem, _cloud_from_off(path, points, rng))]
    samples = load_manifest_dataset(path, points, seed)
    return [(f"{i:04d}_{s.class_name}", s.cloud) for i, s in enumerate(samples)]


def _load_dataset(path_text: str, points: int, seed: int) -> List[LabeledCloud]:
    return load_manifest_dataset(_require_file(path_text), points, seed)


# ---------------------------------------------------------------------------
# tables


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _print_table(rows: List[Dict], columns: Sequence[str]) -> None:
    cells = [[_format_cell(row[c]) for c in columns] for row in rows]
    widths = [
        max(len(col), *(len(r[i]) for r in cells)) if cells else len(col)
        for i, col in enumerate(columns)
    ]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip())
    for r in cells:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())


def _write_csv(path_text: str, rows: List[Dict], columns: Sequence[str]) -> None:
    with open(path_text, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in columns])
    print(f"wrote {path_text}")


def _metrics_table(log: MetricsLog) -> None:
    rows = [
        {
            "epoch": r.epoch,
            "ce": r.ce,
            "rf": r.rf,
            "total": r.total,
            "accuracy": r.accuracy,
            "distance": r.feature_distance,
            "seconds": round(r.wall_clock, 2),
        }
        for r in log.records
    ]
    if rows:
        _print_table(rows, ("epoch", "ce", "rf", "total", "accuracy",
                            "distance", "seconds"))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args: argparse.Namespace) -> int:
    classes = tuple(args.classes.split(","))
    for name in classes:
        if name not in SYNTH_CLASSES:
            raise UsageError(
                f"unknown class {name!r}; choose from {', '.join(SYNTH_CLASSES)}"
            )
    _banner(None, command="synth", classes=classes, per_class=args.per_class,
            points=args.points, seed=args.seed, outdir=args.outdir)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    samples = synth_dataset(classes, args.per_class, args.seed, args.points)
    entries = []
    counts: Dict[str, int] = {}
    for sample in samples:
        idx = counts.get(sample.class_name, 0)
        counts[sample.class_name] = idx + 1
        name = f"{sample.class_name}_{idx:04d}.off"
        mesh = Mesh(sample.cloud.vertices, np.zeros((0, 3), dtype=np.int64))
        (outdir / name).write_text(serialize_off(mesh), encoding="utf-8")
        entries.append((name, sample.label))
    manifest = outdir / "manifest.tsv"
    write_manifest(manifest, entries)
    for name in classes:
        print(f"{name}: {counts.get(name, 0)} samples")
    print(f"manifest written to {manifest}")
    return 0


def cmd_voxelize(args: argparse.Namespace) -> int:
    _require_file(args.input)
    cfg = _build_config(args)
    _banner(cfg, command="voxelize", input=args.input, points=args.points,
            outdir=args.outdir)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, cloud in _load_inputs(args.input, args.points, cfg.seed):
        grid = voxelize(normalize_bounds(cloud), cfg.grid_dims, cfg.threshold)
        out_path = outdir / f"{name}.vxg"
        write_voxel_grid(out_path, grid)
        print(f"{out_path}: {grid.num_occupied} occupied")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    _require_file(args.manifest)
    cfg = _build_config(args)
    log_path = args.log or f"{args.checkpoint}.metrics.jsonl"
    _banner(cfg, command="train", manifest=args.manifest, points=args.points,
            checkpoint=args.checkpoint, log=log_path)
    samples = _load_dataset(args.manifest, args.points, cfg.seed)
    checkpoint, log = train(samples, cfg, cache_dir=args.cache, log_path=log_path)
    save_checkpoint(args.checkpoint, checkpoint)
    _metrics_table(log)
    print(f"metrics written to {log_path}")
    print(f"checkpoint written to {args.checkpoint}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    _require_file(args.manifest)
    checkpoint = load_checkpoint(_require_file(args.checkpoint))
    cfg = checkpoint.config
    _banner(cfg, command="eval", manifest=args.manifest,
            checkpoint=args.checkpoint, points=args.points)
    samples = _load_dataset(args.manifest, args.points, cfg.seed)
    grids, labels, _ = prepare_grids(samples, cfg, args.cache)
    accuracy = evaluate_grids(checkpoint, grids, labels, args.threads)
    print(f"samples = {len(samples)}")
    print(f"accuracy = {accuracy:.2f}%")
    return 0


def cmd_features(args: argparse.Namespace) -> int:
    _require_file(args.input)
    checkpoint = load_checkpoint(_require_file(args.checkpoint))
    cfg = checkpoint.config
    _banner(cfg, command="features", input=args.input, index=args.index,
            checkpoint=args.checkpoint, out=args.out)
    inputs = _load_inputs(args.input, args.points, cfg.seed)
    if not 0 <= args.index < len(inputs):
        raise UsageError(
            f"--index {args.index} out of range for {len(inputs)} sample(s)"
        )
    name, cloud = inputs[args.index]
    grid = voxelize(normalize_bounds(cloud), cfg.grid_dims, cfg.threshold)
    layer = checkpoint.layer
    threads = args.threads or cfg.threads
    features = quanvolve(grid, layer, threads=threads)
    write_feature_tensor(args.out, features)
    q = layer.num_qubits
    for m, filt in enumerate(layer.filters):
        block = features[m * q:(m + 1) * q]
        print(f"filter {m} (kernel {filt.kernel_size}): "
              f"mean {block.mean():+.4f}  std {block.std():.4f}")
    if layer.num_filters >= 2:
        distance = inter_feature_distance(features, layer.num_filters, q)
        print(f"inter-feature distance = {distance:.6f}")
    print(f"features for {name!r} written to {args.out}")
    return 0


def cmd_sweep_lambda(args: argparse.Namespace) -> int:
    _require_file(args.manifest)
    cfg = _build_config(args)
    _banner(cfg, command="sweep-lambda", manifest=args.manifest,
            lambdas=args.lambdas, points=args.points, csv=args.csv)
    samples = _load_dataset(args.manifest, args.points, cfg.seed)
    rows = run_lambda_sweep(samples, cfg, args.lambdas, cache_dir=args.cache)
    columns = ("rf_lambda", "accuracy", "feature_distance")
    _print_table(rows, columns)
    _write_csv(args.csv, rows, columns)
    return 0


def cmd_scale(args: argparse.Namespace) -> int:
    _require_file(args.manifest)
    cfg = _build_config(args)
    _banner(cfg, command="scale", manifest=args.manifest,
            filter_counts=args.filter_counts, strategy=args.strategy,
            points=args.points, csv=args.csv)
    samples = _load_dataset(args.manifest, args.points, cfg.seed)
    rows = run_scaling_experiment(samples, cfg, args.filter_counts,
                                  args.strategy, cache_dir=args.cache)
    columns = ("num_filters", "strategy", "kernel_sizes", "accuracy")
    _print_table(rows, columns)
    _write_csv(args.csv, rows, columns)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quanv3d",
        description="Hybrid quantum-classical 3D point-cloud classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("-o", "--outdir", default="synth_data", metavar="DIR",
                   help="output directory (default synth_data)")
    p.add_argument("--classes", default=",".join(SYNTH_CLASSES), metavar="CSV",
                   help=f"class names (default {','.join(SYNTH_CLASSES)})")
    p.add_argument("--per-class", type=int, default=50, metavar="N",
                   help="samples per class (default 50)")
    p.add_argument("--points", type=int, default=DEFAULT_NUM_POINTS, metavar="N",
                   help=f"points per cloud (default {DEFAULT_NUM_POINTS})")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("voxelize", help="convert clouds to occupancy grids")
    p.add_argument("input", help="an .off file or a dataset manifest")
    p.add_argument("-o", "--outdir", default=".", metavar="DIR",
                   help="grid output directory (default .)")
    _add_data_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("train", help="train filters and head on a dataset")
    p.add_argument("manifest", help="dataset manifest")
    p.add_argument("-o", "--checkpoint", default="model.npz", metavar="FILE",
                   help="checkpoint output path (default model.npz)")
    p.add_argument("--log", metavar="FILE",
                   help="metrics JSONL path (default <checkpoint>.metrics.jsonl)")
    _add_data_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="measure checkpoint accuracy on a dataset")
    p.add_argument("manifest", help="dataset manifest")
    p.add_argument("--checkpoint", required=True, metavar="FILE",
                   help="trained checkpoint to evaluate")
    p.add_argument("--threads", type=int, metavar="N",
                   help="worker threads (default: checkpoint setting)")
    _add_data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("features",
                       help="export one sample's feature tensor for a checkpoint")
    p.add_argument("input", help="an .off file or a dataset manifest")
    p.add_argument("--checkpoint", required=True, metavar="FILE",
                   help="checkpoint supplying the filters")
    p.add_argument("--index", type=int, default=0, metavar="I",
                   help="manifest row to export (default 0)")
    p.add_argument("-o", "--out", default="features.ftr", metavar="FILE",
                   help="feature tensor output path (default features.ftr)")
    p.add_argument("--threads", type=int, metavar="N",
                   help="worker threads (default: checkpoint setting)")
    _add_data_flags(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("sweep-lambda",
                       help="accuracy and feature diversity across penalty weights")
    p.add_argument("manifest", help="dataset manifest")
    p.add_argument("--lambdas", type=_csv_floats, default=(0.0, 0.01, 0.1),
                   metavar="CSV", help="penalty weights (default 0,0.01,0.1)")
    p.add_argument("--csv", default="sweep.csv", metavar="FILE",
                   help="machine-readable output (default sweep.csv)")
    _add_data_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("scale", help="accuracy across filter counts")
    p.add_argument("manifest", help="dataset manifest")
    p.add_argument("--filter-counts", type=_csv_ints, default=(2, 6),
                   metavar="CSV", help="filter counts to train (default 2,6)")
    p.add_argument("--strategy", choices=("mixed", "fixed"), default="mixed",
                   help="kernel assignment: round-robin 2,3,4 or all 4 "
                        "(default mixed)")
    p.add_argument("--csv", default="scale.csv", metavar="FILE",
                   help="machine-readable output (default scale.csv)")
    _add_data_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_scale)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
