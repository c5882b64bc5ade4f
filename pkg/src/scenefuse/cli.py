"""Command-line client for the engine.

Subcommands mirror the job layer one-to-one; the heavy lifting lives in
scenefuse.jobs so the HTTP service and this CLI stay behaviorally
identical.

Exit codes: 0 success, 2 configuration error, 3 input data error,
1 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback

from .errors import ConfigError, InputDataError, SceneFuseError

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenefuse",
        description="Multi-camera depth fusion, tracking, and zone event engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="replay recorded depth + detections")
    run.add_argument("--config", required=True)
    run.add_argument("--input", required=True)
    run.add_argument("--output", required=True)
    run.add_argument("--realtime", action="store_true",
                     help="pace replay to the recorded timestamps")

    simulate = sub.add_parser("simulate", help="render a scene, then replay it")
    simulate.add_argument("--scene", required=True)
    simulate.add_argument("--config", required=True)
    simulate.add_argument("--output", required=True)
    simulate.add_argument("--seed", type=int, default=None)

    calibrate = sub.add_parser("calibrate", help="rigid fit from correspondences")
    calibrate.add_argument("--pairs", required=True,
                           help="JSONL of {source: [x,y,z], target: [x,y,z]}")
    calibrate.add_argument("--source-cloud", default=None, help="PLY to ICP-refine")
    calibrate.add_argument("--target-cloud", default=None, help="PLY to ICP-refine")
    calibrate.add_argument("--output", required=True, help="pose JSON path")

    bench = sub.add_parser("bench", help="per-stage timings and FPS on this host")
    bench.add_argument("--config", required=True)
    bench.add_argument("--input", default=None,
                       help="replay input dir; generated when omitted")
    bench.add_argument("--output", required=True)
    bench.add_argument("--frames", type=int, default=300)
    bench.add_argument("--duration", type=float, default=None,
                       help="seconds at 10 Hz; overrides --frames")

    accuracy = sub.add_parser("accuracy", help="distance-accuracy heatmaps")
    accuracy.add_argument("--config", default=None, help="experiment overrides JSON")
    accuracy.add_argument("--output", required=True)
    accuracy.add_argument("--seed", type=int, default=None)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)

    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    from . import jobs

    summary = jobs.run_replay(args.config, args.input, args.output,
                              realtime=args.realtime)
    print(f"processed {summary.frames} frames, {summary.events} events, "
          f"{summary.dropped_detections} detections dropped")
    print(f"outputs: {summary.events_path} {summary.tracks_path} {summary.stats_path}")
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    from . import jobs

    summary = jobs.run_simulation(args.scene, args.config, args.output,
                                  seed=args.seed)
    print(f"simulated {summary.run.frames} frames, {summary.run.events} events")
    print(f"ground truth: {summary.ground_truth_path}")
    return EXIT_OK


def _cmd_calibrate(args: argparse.Namespace) -> int:
    from . import jobs

    summary = jobs.run_calibration(
        args.pairs, args.output,
        source_cloud=args.source_cloud, target_cloud=args.target_cloud,
    )
    print(f"pose written to {summary.pose_path} "
          f"(rms residual {summary.rms_residual:.3e})")
    if summary.icp_rms_residual is not None:
        print(f"icp refinement: rms {summary.icp_rms_residual:.3e} "
              f"after {summary.icp_iterations} iterations")
    return EXIT_OK


def _cmd_bench(args: argparse.Namespace) -> int:
    from . import jobs

    frames = args.frames
    if args.duration is not None:
        frames = max(1, int(round(args.duration * 10.0)))
    report = jobs.run_benchmark(args.config, args.output, frames=frames,
                                input_dir=args.input)
    print(jobs.format_bench_table(report))
    return EXIT_OK


def _cmd_accuracy(args: argparse.Namespace) -> int:
    from . import jobs

    config = jobs.load_accuracy_config(args.config)
    if args.seed is not None:
        from dataclasses import replace
        config.conditions = [replace(c, seed=args.seed) for c in config.conditions]
    summary = jobs.run_accuracy(args.output, config=config)
    for name in summary.conditions:
        state = "all green" if summary.all_green[name] else "has non-green cells"
        print(f"condition {name}: {state}")
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "simulate": _cmd_simulate,
    "calibrate": _cmd_calibrate,
    "bench": _cmd_bench,
    "accuracy": _cmd_accuracy,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputDataError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SceneFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
