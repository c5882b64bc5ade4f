"""Job layer: the operations behind both the CLI and the HTTP service.

Replay input layout (one directory per camera, ids from the run config):

    input/
      cam<ID>/
        index.jsonl        per-frame {"frame", "t", "depth": <filename>}
        frame_00000.dpt    DPT1 depth frames
        detections.jsonl   detection records for this camera

Every job writes its outputs under an output directory and returns a
summary dataclass.  Replay is deterministic: identical inputs, config and
seed produce byte-identical events.jsonl and tracks.jsonl.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .config import (
    build_noise,
    build_pipeline_config,
    build_scene,
    build_sinks,
    load_run_config,
    load_scene_file,
)
from .errors import ConfigError, DegenerateInputError, InputDataError
from .events import EventLog
from .geometry import Detection2D
from .pipeline import CameraFrame, FrameBundle, PipelineConfig, PipelineEngine, synchronize
from .registration import CorrespondenceSet, IcpParams, estimate_rigid, icp_refine
from .sim import (
    AccuracyConfig,
    AccuracyCondition,
    NoiseModel,
    Scene,
    apply_noise,
    default_accuracy_config,
    ground_truth_positions,
    render_depth,
    run_accuracy_experiment,
    synth_detections,
)
from .cloud import load_ply


@dataclass
class RunSummary:
    frames: int
    events: int
    dropped_detections: int
    events_path: Path
    tracks_path: Path
    stats_path: Path


def _load_camera_stream(input_dir: Path, camera_id: int) -> list[CameraFrame]:
    cam_dir = input_dir / f"cam{camera_id}"
    index_path = cam_dir / "index.jsonl"
    det_path = cam_dir / "detections.jsonl"
    if not cam_dir.is_dir():
        raise InputDataError(f"missing camera directory: {cam_dir}")
    if not index_path.exists():
        raise InputDataError(f"missing frame index: {index_path}")
    entries = formats.read_frame_index(index_path)
    detections = formats.read_detections(det_path) if det_path.exists() else []
    by_frame: dict[int, list[Detection2D]] = {}
    for d in detections:
        by_frame.setdefault(d.frame_index, []).append(d)
    frames = []
    for e in entries:
        depth = formats.read_depth(cam_dir / e["depth"])
        frames.append(CameraFrame(
            camera_id=camera_id,
            timestamp=e["t"],
            depth=depth,
            detections=by_frame.get(e["frame"], []),
        ))
    return frames


def _write_stats(path: Path, engine: PipelineEngine, stats_rows: list,
                 wall_s: float) -> None:
    def _stage(name: str) -> dict:
        vals = [getattr(s, name) for s in stats_rows]
        return {
            "mean_ms": float(np.mean(vals)) if vals else 0.0,
            "total_ms": float(np.sum(vals)) if vals else 0.0,
        }

    doc = {
        "frames": engine.frames_processed,
        "dropped_detections": engine.dropped_detections_total,
        "wall_s": wall_s,
        "fps_overall": engine.frames_processed / wall_s if wall_s > 0 else 0.0,
        "stages": {
            "capture": _stage("capture_ms"),
            "lift": _stage("lift_ms"),
            "fuse": _stage("fuse_ms"),
            "track": _stage("track_ms"),
            "rules": _stage("rules_ms"),
        },
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _replay_bundles(config: PipelineConfig, bundles: list[FrameBundle],
                    output_dir: Path, sinks, realtime: bool = False) -> RunSummary:
    output_dir.mkdir(parents=True, exist_ok=True)
    events_path = output_dir / "events.jsonl"
    tracks_path = output_dir / "tracks.jsonl"
    stats_path = output_dir / "stats.json"

    events_count = 0
    stats_rows = []
    started = time.perf_counter()
    with open(events_path, "w", encoding="utf-8") as ev_fh, \
            open(tracks_path, "w", encoding="utf-8") as tr_fh:
        log = EventLog(stream=ev_fh)
        engine = PipelineEngine(config, event_log=log, sinks=sinks)
        t_prev = None
        for bundle in bundles:
            if realtime and t_prev is not None:
                delay = bundle.timestamp - t_prev
                if delay > 0:
                    time.sleep(delay)
            t_prev = bundle.timestamp
            result = engine.process_bundle(bundle)
            events_count += len(result.events)
            stats_rows.append(result.stats)
            for track in result.tracks:
                tr_fh.write(json.dumps(
                    formats.track_to_record(bundle.timestamp, track)) + "\n")
    wall = time.perf_counter() - started
    _write_stats(stats_path, engine, stats_rows, wall)
    return RunSummary(
        frames=engine.frames_processed,
        events=events_count,
        dropped_detections=engine.dropped_detections_total,
        events_path=events_path,
        tracks_path=tracks_path,
        stats_path=stats_path,
    )


def run_replay(config_path: str | Path, input_dir: str | Path,
               output_dir: str | Path, realtime: bool = False) -> RunSummary:
    """Replay recorded depth + detection files through the pipeline."""
    model = load_run_config(config_path)
    config = build_pipeline_config(model)
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise InputDataError(f"input directory not found: {input_dir}")
    output_dir = Path(output_dir)
    sinks = build_sinks(model.sinks, base_dir=output_dir)
    streams = {
        cam.camera_id: _load_camera_stream(input_dir, cam.camera_id)
        for cam in config.cameras
    }
    bundles = synchronize(streams, config.sync_window)
    return _replay_bundles(config, bundles, output_dir, sinks, realtime=realtime)


def generate_sim_input(scene: Scene, config: PipelineConfig, input_dir: Path,
                       noise: NoiseModel, seed: int) -> Path:
    """Render a scene into the replay input layout plus ground_truth.jsonl."""
    input_dir.mkdir(parents=True, exist_ok=True)
    times = scene.frame_times()
    gt_path = input_dir / "ground_truth.jsonl"
    with open(gt_path, "w", encoding="utf-8") as gt_fh:
        for cam_index, cam_cfg in enumerate(config.cameras):
            cam_dir = input_dir / f"cam{cam_cfg.camera_id}"
            cam_dir.mkdir(parents=True, exist_ok=True)
            index_entries = []
            detections: list[Detection2D] = []
            for fi, t in enumerate(times):
                depth = render_depth(scene, cam_index, t)
                if noise.enabled:
                    depth = apply_noise(depth, scene.cameras[cam_index].intrinsics,
                                        noise, (seed, cam_index, fi))
                name = f"frame_{fi:05d}.dpt"
                formats.write_depth(cam_dir / name, depth)
                index_entries.append({"frame": fi, "t": t, "depth": name})
                for det in synth_detections(scene, cam_index, t, frame_index=fi):
                    detections.append(Detection2D(
                        bbox=det.bbox, class_id=det.class_id,
                        confidence=det.confidence, camera_id=cam_cfg.camera_id,
                        frame_index=fi, timestamp=t,
                    ))
            formats.write_frame_index(cam_dir / "index.jsonl", index_entries)
            formats.write_detections(cam_dir / "detections.jsonl", detections)
        for fi, t in enumerate(times):
            for class_id, pos in ground_truth_positions(scene, t):
                gt_fh.write(json.dumps({
                    "frame": fi, "t": t, "class_id": class_id,
                    "pos": [float(pos[0]), float(pos[1]), float(pos[2])],
                }) + "\n")
    return gt_path


@dataclass
class SimulateSummary:
    run: RunSummary
    input_dir: Path
    ground_truth_path: Path


def run_simulation(scene_path: str | Path, config_path: str | Path,
                   output_dir: str | Path, seed: int | None = None) -> SimulateSummary:
    """Render a scene to files, then replay them through the same path."""
    model = load_run_config(config_path)
    config = build_pipeline_config(model)
    scene_model = load_scene_file(scene_path)
    scene = build_scene(scene_model, fallback_cameras=config.cameras)
    if len(scene.cameras) != len(config.cameras):
        raise ConfigError(
            f"scene has {len(scene.cameras)} cameras but config has "
            f"{len(config.cameras)}; counts must match"
        )
    use_seed = seed if seed is not None else model.sim.seed
    noise = build_noise(scene_model.noise)

    output_dir = Path(output_dir)
    input_dir = output_dir / "sim_input"
    gt_path = generate_sim_input(scene, config, input_dir, noise, use_seed)

    sinks = build_sinks(model.sinks, base_dir=output_dir)
    streams = {
        cam.camera_id: _load_camera_stream(input_dir, cam.camera_id)
        for cam in config.cameras
    }
    bundles = synchronize(streams, config.sync_window)
    run = _replay_bundles(config, bundles, output_dir, sinks)
    return SimulateSummary(run=run, input_dir=input_dir, ground_truth_path=gt_path)


@dataclass
class CalibrationSummary:
    pose_path: Path
    rms_residual: float
    icp_rms_residual: float | None = None
    icp_iterations: int | None = None


def run_calibration(pairs_path: str | Path, output_path: str | Path,
                    source_cloud: str | Path | None = None,
                    target_cloud: str | Path | None = None,
                    icp: IcpParams | None = None) -> CalibrationSummary:
    """Closed-form rigid fit from correspondences, optionally ICP-refined."""
    pairs_path = Path(pairs_path)
    if not pairs_path.exists():
        raise InputDataError(f"correspondence file not found: {pairs_path}")
    corr = CorrespondenceSet.load_jsonl(pairs_path)
    try:
        transform = estimate_rigid(corr)
    except DegenerateInputError as exc:
        raise ConfigError(f"correspondences are unusable: {exc}") from exc
    mapped = transform.apply(corr.source)
    rms = float(np.sqrt(np.mean(np.sum((mapped - corr.target) ** 2, axis=1))))

    icp_rms = None
    icp_iters = None
    extra: dict = {}
    if source_cloud is not None and target_cloud is not None:
        src = load_ply(source_cloud)
        tgt = load_ply(target_cloud)
        result = icp_refine(src, tgt, transform, icp or IcpParams())
        transform = result.transform
        icp_rms = result.rms_residual
        icp_iters = result.iterations
        extra = {"icp_rms_residual": icp_rms, "icp_iterations": icp_iters,
                 "icp_converged": result.converged}

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    formats.write_pose(output_path, transform, rms_residual=rms, extra=extra)
    return CalibrationSummary(
        pose_path=output_path, rms_residual=rms,
        icp_rms_residual=icp_rms, icp_iterations=icp_iters,
    )


# --- Benchmark --------------------------------------------------------------

BENCH_CONFIG_NAMES = ("single_camera", "two_cameras", "one_file", "two_files")


@dataclass
class BenchConfigResult:
    name: str
    frames: int
    fps: float
    stage_ms_mean: dict[str, float] = field(default_factory=dict)


@dataclass
class BenchReport:
    frames_per_config: int
    results: list[BenchConfigResult]

    def to_doc(self) -> dict:
        return {
            "frames_per_config": self.frames_per_config,
            "results": [
                {"name": r.name, "frames": r.frames, "fps": r.fps,
                 "stage_ms_mean": r.stage_ms_mean}
                for r in self.results
            ],
        }

    @staticmethod
    def from_doc(doc: dict) -> "BenchReport":
        return BenchReport(
            frames_per_config=int(doc["frames_per_config"]),
            results=[
                BenchConfigResult(
                    name=r["name"], frames=int(r["frames"]), fps=float(r["fps"]),
                    stage_ms_mean=dict(r["stage_ms_mean"]),
                )
                for r in doc["results"]
            ],
        )


def _bench_scene(config: PipelineConfig, n_cameras: int, frames: int,
                 frame_rate: float = 10.0) -> Scene:
    from .sim import Actor, Box, SceneCamera

    duration = (frames - 1) / frame_rate
    mover = Actor(
        shape=Box(np.array([-0.25, -0.85, 3.0]), np.array([0.25, 0.85, 3.3])),
        class_id=1,
        trajectory=[(0.0, np.array([-1.0, 0.0, 4.0])),
                    (duration if duration > 0 else 1.0, np.array([1.0, 0.0, 4.0]))],
    )
    anchor = Actor(
        shape=Box(np.array([1.2, -0.85, 5.0]), np.array([1.7, 0.85, 5.3])),
        class_id=2,
    )
    cams = [SceneCamera(c.intrinsics, c.pose) for c in config.cameras[:n_cameras]]
    return Scene(actors=[mover, anchor], cameras=cams,
                 duration=duration, frame_rate=frame_rate)


def _measure_run(config: PipelineConfig, bundle_iter, name: str) -> BenchConfigResult:
    """Consume a bundle source end to end; source cost (camera render or
    file decode) counts toward FPS, matching a capture stage."""
    engine = PipelineEngine(config, event_log=None, sinks=[])
    stats_rows = []
    started = time.perf_counter()
    for bundle in bundle_iter:
        result = engine.process_bundle(bundle)
        stats_rows.append(result.stats)
    wall = time.perf_counter() - started
    stage_means = {
        stage: float(np.mean([getattr(s, f"{stage}_ms") for s in stats_rows]))
        for stage in ("capture", "lift", "fuse", "track", "rules")
    }
    return BenchConfigResult(
        name=name,
        frames=len(stats_rows),
        fps=len(stats_rows) / wall if wall > 0 else 0.0,
        stage_ms_mean=stage_means,
    )


def _live_bundle_iter(scene: Scene, config: PipelineConfig):
    """Render frames on the fly: the live-capture stand-in."""
    for fi, t in enumerate(scene.frame_times()):
        frames: dict[int, CameraFrame] = {}
        for cam_index, cam_cfg in enumerate(config.cameras[:len(scene.cameras)]):
            depth = render_depth(scene, cam_index, t)
            dets = [
                Detection2D(bbox=d.bbox, class_id=d.class_id, confidence=d.confidence,
                            camera_id=cam_cfg.camera_id, frame_index=fi, timestamp=t)
                for d in synth_detections(scene, cam_index, t, frame_index=fi)
            ]
            frames[cam_cfg.camera_id] = CameraFrame(cam_cfg.camera_id, t, depth, dets)
        yield FrameBundle(t, frames, "full")


def _file_bundle_iter(input_dir: Path, config: PipelineConfig, limit: int):
    """Decode depth frames from disk on the fly: the file-replay stand-in.

    Bench inputs are generated with aligned timestamps, so frames pair up
    index by index.
    """
    plans = []
    for cam in config.cameras:
        cam_dir = input_dir / f"cam{cam.camera_id}"
        entries = formats.read_frame_index(cam_dir / "index.jsonl")[:limit]
        det_path = cam_dir / "detections.jsonl"
        detections = formats.read_detections(det_path) if det_path.exists() else []
        by_frame: dict[int, list[Detection2D]] = {}
        for d in detections:
            by_frame.setdefault(d.frame_index, []).append(d)
        plans.append((cam.camera_id, cam_dir, entries, by_frame))
    n = min(len(p[2]) for p in plans)
    for i in range(n):
        frames: dict[int, CameraFrame] = {}
        for cam_id, cam_dir, entries, by_frame in plans:
            e = entries[i]
            depth = formats.read_depth(cam_dir / e["depth"])
            frames[cam_id] = CameraFrame(
                cam_id, e["t"], depth, by_frame.get(e["frame"], []))
        yield FrameBundle(min(f.timestamp for f in frames.values()), frames, "full")


def run_benchmark(config_path: str | Path, output_dir: str | Path,
                  frames: int = 300, input_dir: str | Path | None = None) -> BenchReport:
    """Measure FPS for 1/2-camera live-style and 1/2-file replay runs.

    Absolute numbers are host-specific; the stable property is the ordering
    (two cameras or two files never beat one on the same host).
    """
    model = load_run_config(config_path)
    config = build_pipeline_config(model)
    if len(config.cameras) < 2:
        raise ConfigError("bench needs a config with at least 2 cameras")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    def sub_config(n: int) -> PipelineConfig:
        return PipelineConfig(
            cameras=config.cameras[:n], sync_window=config.sync_window,
            fusion=config.fusion, tracker=config.tracker,
            zones=config.zones, rules=config.rules,
        )

    results = []
    for n, name in ((1, "single_camera"), (2, "two_cameras")):
        scene = _bench_scene(config, n, frames)
        cfg = sub_config(n)
        results.append(_measure_run(cfg, _live_bundle_iter(scene, cfg), name))

    if input_dir is None:
        file_input = output_dir / "bench_input"
        scene = _bench_scene(config, 2, frames)
        generate_sim_input(scene, sub_config(2), file_input,
                           NoiseModel(enabled=False), seed=0)
    else:
        file_input = Path(input_dir)
        if not file_input.is_dir():
            raise InputDataError(f"bench input directory not found: {file_input}")

    for n, name in ((1, "one_file"), (2, "two_files")):
        cfg = sub_config(n)
        results.append(_measure_run(
            cfg, _file_bundle_iter(file_input, cfg, frames), name))

    report = BenchReport(frames_per_config=frames, results=results)
    (output_dir / "bench.json").write_text(json.dumps(report.to_doc(), indent=2) + "\n")
    return report


def format_bench_table(report: BenchReport) -> str:
    lines = [f"{'configuration':>16} {'frames':>8} {'fps':>10}"]
    for r in report.results:
        lines.append(f"{r.name:>16} {r.frames:>8} {r.fps:>10.2f}")
    return "\n".join(lines)


# --- Accuracy experiment ----------------------------------------------------

@dataclass
class AccuracySummary:
    csv_paths: list[Path]
    ppm_paths: list[Path]
    conditions: list[str]
    all_green: dict[str, bool]


def load_accuracy_config(path: str | Path | None,
                         noise_enabled: bool = True) -> AccuracyConfig:
    """Experiment config file: optional overrides of the default layout."""
    cfg = default_accuracy_config(noise_enabled=noise_enabled)
    if path is None:
        return cfg
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"experiment config not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except ValueError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    allowed = {"conditions", "noise_enabled"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{p}: unknown key '{sorted(unknown)[0]}'")
    if "noise_enabled" in doc:
        cfg = default_accuracy_config(noise_enabled=bool(doc["noise_enabled"]))
    if "conditions" in doc:
        conditions = []
        for c in doc["conditions"]:
            extra = set(c) - {"name", "width", "height", "focal", "seed",
                              "camera_pitch_deg", "disparity_std", "baseline",
                              "noise_enabled"}
            if extra:
                raise ConfigError(f"{p}: unknown key '{sorted(extra)[0]}'")
            noise = NoiseModel(
                disparity_std=float(c.get("disparity_std", 0.25)),
                baseline=float(c.get("baseline", 0.12)),
                enabled=bool(c.get("noise_enabled", doc.get("noise_enabled", True))),
            )
            conditions.append(AccuracyCondition(
                name=str(c["name"]),
                width=int(c.get("width", 1280)),
                height=int(c.get("height", 720)),
                focal=float(c.get("focal", 700.0)),
                noise=noise,
                seed=int(c.get("seed", 0)),
                camera_pitch_deg=float(c.get("camera_pitch_deg", 0.0)),
            ))
        cfg.conditions = conditions
    return cfg


def run_accuracy(output_dir: str | Path, config: AccuracyConfig | None = None,
                 experiment_path: str | Path | None = None) -> AccuracySummary:
    if config is None:
        config = load_accuracy_config(experiment_path)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    outcome = run_accuracy_experiment(config)

    csv_paths, ppm_paths, names, all_green = [], [], [], {}
    for report in outcome.reports + [outcome.average]:
        csv_path = output_dir / f"heatmap_{report.condition}.csv"
        ppm_path = output_dir / f"heatmap_{report.condition}.ppm"
        csv_path.write_text(report.to_csv_text())
        ppm_path.write_bytes(report.to_ppm_bytes())
        csv_paths.append(csv_path)
        ppm_paths.append(ppm_path)
        names.append(report.condition)
        all_green[report.condition] = all(
            r.abs_error is not None and r.abs_error < 0.30 for r in report.rows
        )
    return AccuracySummary(csv_paths=csv_paths, ppm_paths=ppm_paths,
                           conditions=names, all_green=all_green)
