"""Command-line entry point wiring the pipeline into reproducible runs.

Subcommands: synth, density, saccade, run, eval, bench, stats.
Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
4 detector adapter failure.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

from .config import ConfigError, PipelineConfig, build_config
from .core import ScaleLevel, load_scene, save_scene
from .density import DmapError, read_dmap, render_gt_density, write_dmap
from .evaluate import (
    BudgetReport,
    compare_budgets,
    curve_csv,
    evaluate_detections,
    sliding_window_run,
)
from .gaze import (
    AdapterError,
    CostedDetector,
    DetectorAdapter,
    ExternalCommandDetector,
    NoisyDetector,
    OracleDetector,
)
from .merge import read_detections, write_detections
from .pipeline import run_pipeline
from .saccade import patch_manifest, saccade
from .synth import InfeasibleSceneError, build_scene_spec, generate_scene, scene_stats

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ADAPTER = 4

_CONFIG_FLAGS = (
    ("downsample", float, "original pixels per density-map cell"),
    ("threshold", float, "cell density needed for patch selection"),
    ("expansion", float, "patch growth factor about the cell center"),
    ("count_scale", float, "training-style density multiplier"),
    ("nms_iou", float, "IoU above which merged boxes are suppressed"),
    ("workers", int, "parallel detector workers"),
    ("seed", int, "root seed for all randomness"),
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key=value config file")
    for name, ftype, help_text in _CONFIG_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", type=ftype, help=help_text)
    parser.add_argument("--boundaries", help="scale thresholds, e.g. 800,1600,3200")
    parser.add_argument("--grids", help="grid cells per scale, e.g. 16,8,4,2")
    parser.add_argument("--alphas", help="loss weights per scale, e.g. 0.01,0.1,10,100")
    parser.add_argument("--standard-size", help="standard frame WxH, or 'auto'")


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides: dict = {}
    for name, _, _ in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "boundaries", None) is not None:
        overrides["boundaries"] = tuple(float(v) for v in args.boundaries.split(","))
    if getattr(args, "grids", None) is not None:
        overrides["grids"] = tuple(int(v) for v in args.grids.split(","))
    if getattr(args, "alphas", None) is not None:
        overrides["alphas"] = tuple(float(v) for v in args.alphas.split(","))
    std = getattr(args, "standard_size", None)
    if std is not None:
        if std == "auto":
            overrides["standard_size"] = None
        else:
            try:
                w, h = std.split("x")
                overrides["standard_size"] = (int(w), int(h))
            except ValueError as exc:
                raise ConfigError(f"cannot parse standard size {std!r}") from exc
    try:
        return build_config(getattr(args, "config", None), overrides)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _make_adapter(args: argparse.Namespace, annotations, config: PipelineConfig) -> DetectorAdapter:
    choice = args.adapter
    if choice == "oracle":
        return OracleDetector(annotations)
    if choice == "noisy":
        return NoisyDetector(
            annotations,
            jitter=args.jitter,
            miss_rate=args.miss_rate,
            fp_rate=args.fp_rate,
            seed=config.seed,
        )
    if choice.startswith("exec:"):
        command = shlex.split(choice[len("exec:") :])
        return ExternalCommandDetector(command)
    raise ConfigError(f"unknown adapter {choice!r}; expected oracle, noisy, or exec:<command>")


def _print_json(payload) -> None:
    json.dump(payload, sys.stdout, indent=1)
    sys.stdout.write("\n")


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        spec = build_scene_spec(
            args.spec,
            {
                "width": args.width,
                "height": args.height,
                "object_count": args.objects,
                "foreground_fraction_target": args.foreground,
                "min_side": args.min_side,
                "max_side": args.max_side,
                "cluster_count": args.clusters,
                "seed": args.seed,
            },
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    annotations, extent = generate_scene(spec)
    save_scene(args.out, annotations, extent)
    _print_json({"annotations": len(annotations), "out": str(args.out)})
    return EXIT_OK


def cmd_density(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    annotations, extent = load_scene(args.annotations)
    dset = render_gt_density(annotations, extent, config.downsample, config.boundaries)
    write_dmap(dset, args.out)
    _print_json(
        {
            "out": str(args.out),
            "map_size": [dset.width, dset.height],
            "mass": {s.label: dset[s].total_mass() for s in ScaleLevel},
        }
    )
    return EXIT_OK


def cmd_saccade(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    annotations, extent = load_scene(args.annotations)
    if args.density:
        dset = read_dmap(args.density)
    else:
        dset = render_gt_density(annotations, extent, config.downsample, config.boundaries)
    patches = saccade(
        dset,
        grids=config.grid_specs(),
        threshold=config.threshold,
        expansion=config.expansion,
        extent=extent,
    )
    manifest = patch_manifest(patches)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    _print_json({"patches": len(patches), "out": str(args.out)})
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    annotations, extent = load_scene(args.annotations)
    adapter = _make_adapter(args, annotations, config)
    density = read_dmap(args.density) if args.density else None
    run = run_pipeline(annotations, extent, config, adapter, density=density)
    write_detections(args.out, run.detections)
    if args.dump_density:
        write_dmap(run.density, args.dump_density)
    if args.dump_patches:
        with open(args.dump_patches, "w", encoding="utf-8") as fh:
            json.dump(patch_manifest(run.patches), fh, indent=1)
            fh.write("\n")
    if args.dump_config:
        Path(args.dump_config).write_text(config.to_file_text(), encoding="utf-8")
    _print_json(
        {
            "detections": len(run.detections),
            "out": str(args.out),
            "budget": run.budget.to_json_dict(),
            "standard_size": list(run.standard_size),
        }
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    detections = read_detections(args.detections)
    annotations, _ = load_scene(args.annotations)
    report = evaluate_detections(detections, annotations)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json_dict(), fh, indent=1)
            fh.write("\n")
    if args.pr_csv:
        Path(args.pr_csv).write_text(curve_csv(report.overall), encoding="utf-8")
    print(report.to_table())
    _print_json(report.to_json_dict())
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    annotations, extent = load_scene(args.annotations)
    standard_size = config.resolve_standard_size(extent)

    def build_adapter() -> CostedDetector:
        return CostedDetector(_make_adapter(args, annotations, config), args.cost_per_pixel)

    runs: dict[str, BudgetReport] = {}
    pipeline_adapter = build_adapter()
    run = run_pipeline(annotations, extent, config, pipeline_adapter)
    runs["saccade"] = run.budget

    for grid in (config.grids[0], config.grids[1]):
        adapter = build_adapter()
        _, report = sliding_window_run(
            extent,
            grid,
            annotations,
            adapter,
            standard_size,
            expansion=config.expansion,
            workers=config.workers,
            nms_iou=config.nms_iou,
        )
        report.baseline_name = "saccade"
        if report.pixels_processed:
            report.budget_ratio = runs["saccade"].pixels_processed / report.pixels_processed
        runs[f"sw_{grid * grid}"] = report

    payload = {
        "note": "pixel budgets are the deterministic cost proxy; wall-clock is informative only",
        "standard_size": list(standard_size),
        "runs": {name: r.to_json_dict() for name, r in runs.items()},
        "ratios": {
            f"{name}_vs_saccade": compare_budgets(runs["saccade"], report)
            for name, report in runs.items()
            if name != "saccade"
        },
    }
    rows = [("run", "patches", "pixels", "wall_s", "ratio_vs_saccade")]
    for name, report in runs.items():
        ratio = compare_budgets(runs["saccade"], report)
        rows.append(
            (
                name,
                str(report.patch_count),
                str(report.pixels_processed),
                f"{report.wall_seconds:.3f}",
                f"{ratio:.2f}",
            )
        )
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    print("\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    _print_json(payload)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    annotations, extent = load_scene(args.annotations)
    stats = scene_stats(annotations, extent)
    _print_json(stats.to_json_dict())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densegaze",
        description="Density-guided dual-stage detection pipeline for gigapixel scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic annotated scene")
    p.add_argument("--out", required=True, help="annotation JSON to write")
    p.add_argument("--spec", metavar="FILE", help="key=value scene spec file")
    p.add_argument("--objects", type=int, help="object count (default 500)")
    p.add_argument("--width", type=int, help="scene width in pixels")
    p.add_argument("--height", type=int, help="scene height in pixels")
    p.add_argument("--foreground", type=float, help="coverage target fraction")
    p.add_argument("--min-side", type=float, help="smallest box side")
    p.add_argument("--max-side", type=float, help="largest box side")
    p.add_argument("--clusters", type=int, help="crowd cluster count")
    p.add_argument("--seed", type=int, help="generator seed (default 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("density", help="render ground-truth density maps to a DMAP file")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True, help="DMAP file to write")
    _add_config_flags(p)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("saccade", help="emit the selected-patch manifest")
    p.add_argument("--annotations", required=True)
    p.add_argument("--density", help="use a precomputed DMAP instead of rendering")
    p.add_argument("--out", required=True, help="patch manifest JSON to write")
    _add_config_flags(p)
    p.set_defaults(func=cmd_saccade)

    p = sub.add_parser("run", help="full pipeline: density, saccade, gaze, merge")
    p.add_argument("--annotations", required=True)
    p.add_argument("--adapter", default="oracle", help="oracle, noisy, or exec:<command>")
    p.add_argument("--density", help="use a precomputed DMAP instead of rendering")
    p.add_argument("--out", required=True, help="detections JSON to write")
    p.add_argument("--dump-density", help="also write the density maps as DMAP")
    p.add_argument("--dump-patches", help="also write the patch manifest JSON")
    p.add_argument("--dump-config", help="also write the effective config file")
    p.add_argument("--jitter", type=float, default=0.0, help="noisy adapter box jitter (px)")
    p.add_argument("--miss-rate", type=float, default=0.0, help="noisy adapter miss probability")
    p.add_argument("--fp-rate", type=float, default=0.0, help="noisy adapter false positives per patch")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score detections against annotations")
    p.add_argument("--detections", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", help="write the report JSON here")
    p.add_argument("--pr-csv", help="write precision-recall samples as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="compare pixel budgets: saccade vs sliding windows")
    p.add_argument("--annotations", required=True)
    p.add_argument("--adapter", default="oracle", help="oracle, noisy, or exec:<command>")
    p.add_argument("--cost-per-pixel", type=float, default=0.0, help="busy-work per pixel")
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--miss-rate", type=float, default=0.0)
    p.add_argument("--fp-rate", type=float, default=0.0)
    p.add_argument("--out", help="write the comparison JSON here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stats", help="bucket counts and coverage of a scene")
    p.add_argument("--annotations", required=True)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InfeasibleSceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AdapterError as exc:
        print(f"adapter error: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except (OSError, DmapError, json.JSONDecodeError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
