"""Command-line interface binding the toolkit together.

Subcommands: ``simulate``, ``train-model``, ``radio-slam``,
``radio-lidar-slam``, ``eval``, ``render``. All take ``--seed`` and
``--config`` (JSON overrides); log verbosity comes from the RADIOSLAM_LOG
environment variable. Exit codes: 0 success, 1 runtime failure (with a
diagnostic on stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import dataset_io, mapping
from .distance_model import collect_training_pairs, train
from .evaluation import ALIGNMENT_MODES, ate
from .pipeline import (
    PipelineConfig,
    run_radio_lidar_slam,
    run_radio_slam,
    stamp_fingerprints,
)
from .simulator import SCENARIOS, WorldConfig, simulate_records

log = logging.getLogger("radioslam")


class CliError(Exception):
    """User-facing failure; printed to stderr with exit code 1."""


def _setup_logging() -> None:
    level = os.environ.get("RADIOSLAM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(message)s")


def _load_json_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _pipeline_config(args) -> PipelineConfig:
    overrides = _load_json_config(args.config)
    config = PipelineConfig.from_dict(overrides) if overrides else PipelineConfig()
    if getattr(args, "keyframe_spacing", None) is not None:
        config.keyframe_spacing = args.keyframe_spacing
    if getattr(args, "similarity_threshold", None) is not None:
        config.similarity_threshold = args.similarity_threshold
    if getattr(args, "min_travel_distance", None) is not None:
        config.min_travel_distance = args.min_travel_distance
    return config


def cmd_simulate(args) -> int:
    overrides = _load_json_config(args.config)
    if overrides:
        world = WorldConfig.from_dict(overrides["world"])
        waypoints = [tuple(w) for w in overrides["waypoints"]]
        if args.seed is not None:
            world.seed = args.seed
        scenario_name = overrides.get("name", "custom")
    else:
        scenario = SCENARIOS[args.scenario]
        kwargs = {}
        if args.transmitters is not None:
            kwargs["n_transmitters"] = args.transmitters
        if args.rss_noise_scale is not None and args.scenario == "loop":
            kwargs["rss_noise_scale"] = args.rss_noise_scale
        world, waypoints = scenario(seed=args.seed if args.seed is not None else 0, **kwargs)
        scenario_name = args.scenario
    log.info("simulating scenario %s (seed %s)", scenario_name, world.seed)
    records = simulate_records(world, waypoints)
    meta = {
        "tool": "radioslam simulate",
        "scenario": scenario_name,
        "seed": world.seed,
        "world": world.to_dict(),
        "rss_offset": args.rss_offset,
    }
    manifest = dataset_io.save_dataset(args.out, records, args.rss_offset, meta)
    print(
        f"wrote dataset to {manifest.parent} "
        f"({len(records.odometry)} odometry, {len(records.fingerprints)} fingerprints, "
        f"{len(records.scans)} scans)"
    )
    return 0


def cmd_train_model(args) -> int:
    dataset = dataset_io.load_dataset(args.dataset)
    stamped, poses = stamp_fingerprints(dataset)
    samples = collect_training_pairs(
        stamped, poses, max_pair_distance=args.max_pair_distance, rss_offset=dataset.rss_offset
    )
    model = train(samples, bin_width=args.bin_width, rss_offset=dataset.rss_offset)
    meta = {
        "tool": "radioslam train-model",
        "dataset": str(Path(args.dataset)),
        "samples": len(samples),
        "max_pair_distance": args.max_pair_distance,
        "seed": args.seed,
    }
    dataset_io.save_model(args.out, model, meta)
    populated = sum(1 for b in model.bins if b.count > 0)
    print(f"trained model from {len(samples)} pairs; {populated}/{len(model.bins)} bins populated -> {args.out}")
    return 0


def _write_slam_outputs(out_dir: Path, trajectory, report, meta) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_io.save_trajectory(out_dir / "trajectory.csv", trajectory, meta)
    dataset_io.save_report(out_dir / "report.json", report)


def cmd_radio_slam(args) -> int:
    dataset = dataset_io.load_dataset(args.dataset)
    model = dataset_io.load_model(args.model)
    config = _pipeline_config(args)
    config.rss_offset = dataset.rss_offset
    result = run_radio_slam(dataset, model, config)
    out = Path(args.out)
    meta = {
        "tool": "radioslam radio-slam",
        "dataset": str(Path(args.dataset)),
        "model": str(Path(args.model)),
        "seed": args.seed,
        "config": config.to_dict(),
    }
    _write_slam_outputs(out, result.trajectory, result.report, meta)
    from .pose_graph import dump_graph

    dataset_io.atomic_write_text(out / "graph.txt", dump_graph(result.graph))
    chi2 = result.report["chi2"]
    print(
        f"radio SLAM: {result.report['keyframes']} keyframes, "
        f"{result.report['edges']['radio']} radio closures, "
        f"chi2 {chi2['initial']:.3g} -> {chi2['final']:.3g}; wrote {out}/trajectory.csv"
    )
    return 0


def cmd_radio_lidar_slam(args) -> int:
    dataset = dataset_io.load_dataset(args.dataset)
    model = dataset_io.load_model(args.model)
    config = _pipeline_config(args)
    config.rss_offset = dataset.rss_offset
    result = run_radio_lidar_slam(dataset, model, config)
    out = Path(args.out)
    meta = {
        "tool": "radioslam radio-lidar-slam",
        "dataset": str(Path(args.dataset)),
        "model": str(Path(args.model)),
        "seed": args.seed,
        "config": config.to_dict(),
    }
    _write_slam_outputs(out, result.trajectory, result.report, meta)
    pgm_bytes, metadata = mapping.export_pgm(result.grid)
    dataset_io.save_grid(out, "map", result.grid, pgm_bytes, metadata, meta)
    svg = mapping.render_svg([("trajectory", result.trajectory)], result.grid)
    dataset_io.atomic_write_text(out / "map_overlay.svg", svg)
    edges = result.report["edges"]
    print(
        f"radio+LiDAR SLAM: {result.report['keyframes']} keyframes, "
        f"{edges['radio']} radio + {edges['lidar']} LiDAR closures; "
        f"wrote {out}/trajectory.csv and {out}/map.pgm"
    )
    return 0


def cmd_eval(args) -> int:
    estimated = dataset_io.load_trajectory(args.estimated)
    reference = dataset_io.load_trajectory(args.reference)
    report = ate(estimated, reference, alignment=args.alignment, max_dt=args.max_dt)
    print(
        f"ATE mean {report.mean_error:.2f} m  std {report.std_error:.2f} m  "
        f"({len(report.per_pose_errors)} pairs, alignment={report.alignment_used})"
    )
    if args.out:
        dataset_io.save_report(
            args.out,
            {
                "tool": "radioslam eval",
                "estimated": str(Path(args.estimated)),
                "reference": str(Path(args.reference)),
                "max_dt": args.max_dt,
                "seed": args.seed,
                **report.to_dict(),
            },
        )
    return 0


def cmd_render(args) -> int:
    trajectories = []
    for k, path in enumerate(args.trajectory or []):
        label = args.label[k] if args.label and k < len(args.label) else Path(path).stem
        trajectories.append((label, dataset_io.load_trajectory(path)))
    grid = dataset_io.load_grid(args.grid) if args.grid else None
    if not trajectories and grid is None:
        raise CliError("render needs at least one --trajectory or a --grid")
    out = Path(args.out)
    if out.suffix == ".pgm":
        if grid is None:
            raise CliError("PGM output needs --grid")
        pgm_bytes, _ = mapping.export_pgm(
            grid,
            occupied_threshold=args.occupied_threshold,
            free_threshold=args.free_threshold,
        )
        dataset_io.atomic_write_bytes(out, pgm_bytes)
    elif out.suffix == ".svg":
        svg = mapping.render_svg(trajectories, grid, occupied_threshold=args.occupied_threshold)
        dataset_io.atomic_write_text(out, svg)
    else:
        raise CliError(f"unsupported render output {out.suffix!r}; use .svg or .pgm")
    print(f"wrote {out}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="seed recorded in outputs")
    parser.add_argument("--config", default=None, help="JSON config file with overrides")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radioslam",
        description="SLAM from odometry and radio fingerprints, with optional LiDAR refinement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="loop")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--transmitters", type=int, default=None)
    p.add_argument("--rss-noise-scale", type=float, default=None)
    p.add_argument("--rss-offset", type=float, default=100.0)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-model", help="train the similarity-to-distance model")
    p.add_argument("dataset", help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="model output path (JSON)")
    p.add_argument("--bin-width", type=float, default=0.05)
    p.add_argument("--max-pair-distance", type=float, default=10.0)
    _add_common(p)
    p.set_defaults(func=cmd_train_model)

    for name, func, extra_help in (
        ("radio-slam", cmd_radio_slam, "radio-only SLAM"),
        ("radio-lidar-slam", cmd_radio_lidar_slam, "two-pass radio + LiDAR SLAM"),
    ):
        p = sub.add_parser(name, help=extra_help)
        p.add_argument("dataset", help="dataset directory or manifest path")
        p.add_argument("--model", required=True, help="trained distance model (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--keyframe-spacing", type=float, default=None)
        p.add_argument("--similarity-threshold", type=float, default=None)
        p.add_argument("--min-travel-distance", type=float, default=None)
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="absolute trajectory error between two trajectory CSVs")
    p.add_argument("estimated")
    p.add_argument("reference")
    p.add_argument("--alignment", choices=ALIGNMENT_MODES, default="anchor_first")
    p.add_argument("--max-dt", type=float, default=0.1)
    p.add_argument("--out", default=None, help="optional JSON report path")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render trajectories/grids to SVG or PGM")
    p.add_argument("--trajectory", action="append", help="trajectory CSV (repeatable)")
    p.add_argument("--label", action="append", help="label for the matching --trajectory")
    p.add_argument("--grid", default=None, help="map sidecar JSON (from radio-lidar-slam)")
    p.add_argument("--out", required=True, help="output file (.svg or .pgm)")
    p.add_argument("--occupied-threshold", type=float, default=0.65)
    p.add_argument("--free-threshold", type=float, default=0.25)
    _add_common(p)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:  # console_scripts hook
    sys.exit(main())


if __name__ == "__main__":
    entry()
