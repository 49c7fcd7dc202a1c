"""Subcommand front end: segment | eval | diagnose | synth | sweep.

Exit codes: 0 success, 1 validation/usage, 2 I/O, 3 non-convergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io as fio
from .core import (
    InvalidInputError,
    SegmentationConfig,
    StochasticMatrix,
    row_normalize,
)
from .evaluation import IGNORE_ID_DEFAULT, evaluate_pair
from .pipeline import run_segmentation
from .projective import (
    empirical_flow_contraction,
    measure_inflation_scaling,
    measure_linear_nonexpansiveness,
)
from .propagation import upsample_labels
from .synthetic import PlantedPartitionSpec, gen_blob_features, gen_planted_graph

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NONCONVERGED = 3

_CONFIG_FLAGS = {
    "beta": float,
    "expansion_l": int,
    "inflation_r": float,
    "prune_tau": float,
    "affinity_floor": float,
    "flow_tol": float,
    "max_flow_iters": int,
    "gamma": float,
    "prop_tol": float,
    "max_prop_iters": int,
    "storage_mode": str,
    "topk_cap": int,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for name, typ in _CONFIG_FLAGS.items():
        group.add_argument(f"--{name.replace('_', '-')}", type=typ,
                           default=None, dest=name)
    group.add_argument("--config", type=Path, default=None,
                       help="run-config file (flag overrides win)")


def _resolve_config(args, verbose: bool = False) -> SegmentationConfig:
    """Precedence: flag > config file > default."""
    cfg = SegmentationConfig()
    source = {name: "default" for name in _CONFIG_FLAGS}
    if args.config is not None:
        cfg = fio.read_config(args.config)
        for name in _CONFIG_FLAGS:
            if getattr(cfg, name) != getattr(SegmentationConfig(), name):
                source[name] = "config"
    overrides = {}
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
            source[name] = "flag"
    cfg = cfg.updated(**overrides)
    if verbose:
        for name in _CONFIG_FLAGS:
            print(f"config {name} = {getattr(cfg, name)} ({source[name]})")
    return cfg


def _write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _segment_one(features_path: Path, out_dir: Path, cfg, args) -> dict:
    features = fio.read_features(features_path)
    trace_records = []
    trace = trace_records.append if args.trace else None
    run = run_segmentation(features, cfg, trace=trace)
    labels = run.labels
    stem = features_path.stem
    ext = "pgm" if args.label_format == "pgm" else "npy"
    fio.write_labels(labels, out_dir / f"{stem}.{ext}", format=args.label_format)
    if args.upsample:
        th, tw = args.upsample
        up = upsample_labels(labels, th, tw)
        fio.write_labels(up, out_dir / f"{stem}.upsampled.{ext}",
                         format=args.label_format)
    manifest = run.manifest()
    manifest["input"] = features_path.name
    manifest["seed"] = args.seed
    _write_manifest(out_dir / f"{stem}.manifest.json", manifest)
    if args.trace:
        with open(out_dir / f"{stem}.trace.jsonl", "w") as fh:
            for rec in trace_records:
                fh.write(json.dumps(rec) + "\n")
    return manifest


def cmd_segment(args) -> int:
    cfg = _resolve_config(args, verbose=args.verbose)
    src = Path(args.features)
    if src.is_dir():
        inputs = sorted(src.glob("*.npy"))
        if not inputs:
            print(f"error: no .npy files under {src}", file=sys.stderr)
            return EXIT_IO
    else:
        inputs = [src]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(inputs) > 1 and args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            manifests = list(pool.map(
                lambda p: _segment_one(p, out_dir, cfg, args), inputs))
    else:
        manifests = [_segment_one(p, out_dir, cfg, args) for p in inputs]
    for m in manifests:
        status = "ok" if m["flow_converged"] else "NOT CONVERGED"
        print(f"{m['input']}: K={m['num_clusters']} "
              f"flow_iters={m['flow_iterations']} {status}")
    if not all(m["flow_converged"] for m in manifests):
        return EXIT_NONCONVERGED
    return EXIT_OK


def _label_stems(directory: Path) -> dict:
    files = {}
    for path in sorted(directory.iterdir()):
        if path.suffix in (".npy", ".pgm"):
            files.setdefault(path.stem, path)
    return files


def cmd_eval(args) -> int:
    pred = _label_stems(Path(args.pred_dir))
    gt = _label_stems(Path(args.gt_dir))
    common = sorted(set(pred) & set(gt))
    for stem in sorted(set(pred) ^ set(gt)):
        print(f"warning: unmatched stem {stem!r}, skipped", file=sys.stderr)
    if not common:
        print("error: no matching filename stems", file=sys.stderr)
        return EXIT_USAGE

    def score(stem: str) -> dict:
        cm, _, value = evaluate_pair(fio.read_labels(pred[stem]),
                                     fio.read_labels(gt[stem]),
                                     ignore_id=args.ignore_id)
        return {"image": stem, "k_pred": cm.k_pred, "miou": value, "cm": cm}

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(score, common))
    else:
        records = [score(stem) for stem in common]

    from .evaluation import match_clusters, miou as _miou
    if args.dataset_level:
        total = records[0]["cm"]
        for rec in records[1:]:
            total = total.accumulate(rec["cm"])
        aggregate = _miou(total, match_clusters(total))
    else:
        aggregate = float(np.mean([rec["miou"] for rec in records]))

    lines = []
    for rec in records:
        line = {"image": rec["image"], "k_pred": rec["k_pred"],
                "miou": rec["miou"]}
        lines.append(line)
        print(f"{rec['image']}: K={rec['k_pred']} mIoU={rec['miou']:.4f}")
    print(f"aggregate mIoU: {aggregate:.4f} "
          f"({'dataset-level' if args.dataset_level else 'per-image mean'}, "
          f"{len(records)} images)")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            for line in lines:
                fh.write(json.dumps(line) + "\n")
            fh.write(json.dumps({"aggregate_miou": aggregate,
                                 "images": len(records)}) + "\n")
    return EXIT_OK


def _parse_int_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise InvalidInputError(f"expected comma-separated integers: {text!r}") \
            from exc


def _parse_float_list(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise InvalidInputError(f"expected comma-separated numbers: {text!r}") \
            from exc


def _diagnose_source(args, cfg) -> StochasticMatrix:
    if args.features:
        from .affinity import build_transition
        features = fio.read_features(Path(args.features))
        return build_transition(features, cfg)
    spec = PlantedPartitionSpec(block_sizes=_parse_int_list(args.blocks),
                                within=args.within, cross=args.cross,
                                noise=args.noise, seed=args.seed)
    matrix, _ = gen_planted_graph(spec)
    return matrix


def cmd_diagnose(args) -> int:
    cfg = _resolve_config(args, verbose=args.verbose)
    matrix = _diagnose_source(args, cfg)
    dense = matrix.to_dense()
    notes = []
    if dense.min() <= 0:
        # d_H needs strict positivity; lift by the affinity floor and record it
        dense = dense + cfg.affinity_floor
        matrix = row_normalize(dense)
        notes.append("source matrix had zero entries; lifted by "
                     f"affinity_floor={cfg.affinity_floor:g} before measuring")
        dense = matrix.to_dense()
    report = empirical_flow_contraction(matrix, cfg,
                                        row_pairs=args.row_pairs,
                                        rng_seed=args.seed)
    scaling = measure_inflation_scaling(cfg.inflation_r, trials=args.trials,
                                        rng_seed=args.seed)
    nonexp = measure_linear_nonexpansiveness(dense, trials=args.trials,
                                             rng_seed=args.seed)
    report = dataclasses.replace(report, inflation_scaling=scaling,
                                 nonexpansiveness=nonexp,
                                 notes=report.notes + tuple(notes))
    text = report.to_text()
    print(text, end="")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(text)
        (out_dir / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    features, gt = gen_blob_features(args.height, args.width, args.channels,
                                     args.layout, separation=args.separation,
                                     noise=args.noise, seed=args.seed)
    fio.write_features(features, out_dir / "features.npy")
    fio.write_labels(gt, out_dir / "gt.npy", format="npy")
    _write_manifest(out_dir / "synth.manifest.json", {
        "kind": "blobs", "height": args.height, "width": args.width,
        "channels": args.channels, "layout": args.layout,
        "separation": args.separation, "noise": args.noise,
        "seed": args.seed,
    })
    print(f"wrote {out_dir / 'features.npy'} and {out_dir / 'gt.npy'} "
          f"({gt.num_labels} regions)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = _parse_float_list(args.grid)
    if not grid:
        print("error: empty sweep grid", file=sys.stderr)
        return EXIT_USAGE
    cfg = _resolve_config(args, verbose=args.verbose)
    fixture = Path(args.fixture)
    features = fio.read_features(fixture / "features.npy")
    gt = fio.read_labels(fixture / "gt.npy")

    rows = []
    for value in grid:
        if args.param == "beta":
            run_cfg = cfg.updated(beta=value)
        else:
            run_cfg = cfg.updated(inflation_r=value)
        run = run_segmentation(features, run_cfg)
        _, _, score = evaluate_pair(run.labels, gt)
        rows.append({"param": args.param, "value": value,
                     "k": run.num_clusters,
                     "flow_iterations": run.flow.iterations,
                     "converged": run.flow.converged, "miou": score})

    print(f"{args.param:>12}  {'K':>4}  {'iters':>5}  {'mIoU':>8}")
    for row in rows:
        print(f"{row['value']:>12g}  {row['k']:>4}  "
              f"{row['flow_iterations']:>5}  {row['miou']:>8.4f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowseg",
        description="Training-free segmentation via Markov-flow clustering "
                    "and random-walk label propagation over fused affinities.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_seg = sub.add_parser("segment", help="segment feature tensors")
    p_seg.add_argument("features", help="features .npy file or directory")
    p_seg.add_argument("--out", required=True, help="output directory")
    p_seg.add_argument("--label-format", choices=("pgm", "npy"), default="pgm")
    p_seg.add_argument("--upsample", nargs=2, type=int, metavar=("H", "W"),
                       default=None)
    p_seg.add_argument("--trace", action="store_true",
                       help="emit per-iteration flow trace (jsonl)")
    p_seg.add_argument("--jobs", type=int, default=1)
    p_seg.add_argument("--seed", type=int, default=0)
    p_seg.add_argument("--verbose", action="store_true")
    _add_config_flags(p_seg)
    p_seg.set_defaults(func=cmd_segment)

    p_eval = sub.add_parser("eval", help="score predictions against ground truth")
    p_eval.add_argument("pred_dir")
    p_eval.add_argument("gt_dir")
    p_eval.add_argument("--ignore-id", type=int, default=IGNORE_ID_DEFAULT)
    p_eval.add_argument("--dataset-level", action="store_true",
                        help="accumulate confusion matrices before matching")
    p_eval.add_argument("--jobs", type=int, default=1)
    p_eval.add_argument("--out", default=None, help="results jsonl path")
    p_eval.set_defaults(func=cmd_eval)

    p_diag = sub.add_parser("diagnose",
                            help="projective-metric contraction report")
    p_diag.add_argument("--features", default=None,
                        help="build the graph from a features file")
    p_diag.add_argument("--blocks", default="10,10,10",
                        help="planted block sizes (comma-separated)")
    p_diag.add_argument("--within", type=float, default=0.3)
    p_diag.add_argument("--cross", type=float, default=0.01)
    p_diag.add_argument("--noise", type=float, default=0.0)
    p_diag.add_argument("--trials", type=int, default=100)
    p_diag.add_argument("--row-pairs", type=int, default=20)
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.add_argument("--out", default=None, help="report output directory")
    p_diag.add_argument("--verbose", action="store_true")
    _add_config_flags(p_diag)
    p_diag.set_defaults(func=cmd_diagnose)

    p_synth = sub.add_parser("synth", help="generate a blob fixture")
    p_synth.add_argument("--height", type=int, default=8)
    p_synth.add_argument("--width", type=int, default=8)
    p_synth.add_argument("--channels", type=int, default=16)
    p_synth.add_argument("--layout", default="halves",
                         choices=("halves", "quadrants"))
    p_synth.add_argument("--separation", type=float, default=1.0)
    p_synth.add_argument("--noise", type=float, default=0.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_sweep = sub.add_parser("sweep", help="parameter sweep with evaluation")
    p_sweep.add_argument("--param", required=True,
                         choices=("beta", "inflation_r"))
    p_sweep.add_argument("--grid", required=True,
                         help="comma-separated parameter values")
    p_sweep.add_argument("--fixture", required=True,
                         help="directory with features.npy and gt.npy")
    p_sweep.add_argument("--out", default=None, help="results jsonl path")
    p_sweep.add_argument("--verbose", action="store_true")
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except fio.TensorFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
