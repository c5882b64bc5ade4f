"""Schema-validated configuration and scene files.

Both documents are strict: unknown keys are rejected with the offending
key named, so a typo in a safety-relevant section cannot silently
deactivate it.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError, DomainError
from .events import (
    CommandSink,
    FileSink,
    NotificationSink,
    Rule,
    RuleKind,
    StdoutSink,
    Zone,
)
from .geometry import CameraIntrinsics, Point3, RigidTransform
from .pipeline import CameraConfig, FusionParams, PipelineConfig
from .sim import Actor, Box, NoiseModel, Scene, SceneCamera, Sphere
from .tracking import TrackerParams


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class IntrinsicsModel(_StrictModel):
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_min: float = 0.2
    depth_max: float = 20.0


class PoseModel(_StrictModel):
    rotation: list[float] = Field(min_length=9, max_length=9)
    translation: list[float] = Field(min_length=3, max_length=3)


class CameraModel(_StrictModel):
    id: int
    intrinsics: IntrinsicsModel
    pose: PoseModel


class FusionModel(_StrictModel):
    voxel_size: float = 0.05
    merge_radius: float = 0.5
    cloud_stride: int = 8


class TrackerModel(_StrictModel):
    gate_distance: float = 1.0
    confirm_hits: int = 3
    max_misses: int = 5
    process_noise_accel: float = 1.0
    measurement_noise: float = 0.1


class ZoneModel(_StrictModel):
    id: str
    footprint: list[list[float]]
    z_range: list[float] = Field(min_length=2, max_length=2)
    on_exit_alarm: bool = False


class RuleModel(_StrictModel):
    id: str
    kind: Literal["Proximity", "Approach", "DistanceLevel", "ZoneOccupancy"]
    subject_class: int | None = None
    anchor_point: list[float] | None = None
    anchor_class: int | None = None
    threshold: float = 1.0
    window_k: int = 3
    min_step: float = 0.1
    d_min: float = 0.5
    d_max: float = 5.0
    invert: bool = False
    zone_id: str | None = None
    notify: bool = False


class SinkModel(_StrictModel):
    kind: Literal["stdout", "file", "command"]
    target: str | list[str] | None = None


class NoiseModelConfig(_StrictModel):
    disparity_std: float = 0.25
    baseline: float = 0.12
    enabled: bool = False


class SimModel(_StrictModel):
    scene: str | None = None
    seed: int = 0
    noise: NoiseModelConfig = NoiseModelConfig()


class RunConfigModel(_StrictModel):
    cameras: list[CameraModel] = Field(min_length=1)
    sync_window_s: float = 0.05
    fusion: FusionModel = FusionModel()
    tracker: TrackerModel = TrackerModel()
    zones: list[ZoneModel] = []
    rules: list[RuleModel] = []
    sinks: list[SinkModel] = []
    sim: SimModel = SimModel()


def _format_validation_error(exc: ValidationError, source: str) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        if err["type"] == "extra_forbidden":
            parts.append(f"unknown key '{loc}'")
        else:
            parts.append(f"{loc}: {err['msg']}")
    return f"{source}: " + "; ".join(parts)


def parse_run_config(doc: dict, source: str = "config") -> RunConfigModel:
    try:
        return RunConfigModel.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc, source)) from exc


def load_run_config(path: str | Path) -> RunConfigModel:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except ValueError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    return parse_run_config(doc, source=str(p))


def _build_intrinsics(m: IntrinsicsModel) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=m.fx, fy=m.fy, cx=m.cx, cy=m.cy,
        width=m.width, height=m.height,
        depth_min=m.depth_min, depth_max=m.depth_max,
    )


def _build_pose(m: PoseModel) -> RigidTransform:
    rot = np.asarray(m.rotation, dtype=np.float64).reshape(3, 3)
    return RigidTransform(rot, np.asarray(m.translation, dtype=np.float64))


def _build_rule(m: RuleModel) -> Rule:
    anchor_point = None
    if m.anchor_point is not None:
        if len(m.anchor_point) != 3:
            raise ConfigError(f"rule {m.id}: anchor_point needs 3 coordinates")
        anchor_point = Point3(*[float(v) for v in m.anchor_point])
    return Rule(
        id=m.id,
        kind=RuleKind(m.kind),
        subject_class=m.subject_class,
        anchor_point=anchor_point,
        anchor_class=m.anchor_class,
        threshold=m.threshold,
        window_k=m.window_k,
        min_step=m.min_step,
        d_min=m.d_min,
        d_max=m.d_max,
        invert=m.invert,
        zone_id=m.zone_id,
        notify=m.notify,
    )


def build_sinks(models: list[SinkModel], base_dir: Path | None = None) -> list[NotificationSink]:
    sinks: list[NotificationSink] = []
    for m in models:
        if m.kind == "stdout":
            sinks.append(StdoutSink())
        elif m.kind == "file":
            if not m.target or not isinstance(m.target, str):
                raise ConfigError("file sink needs a 'target' path")
            path = Path(m.target)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            sinks.append(FileSink(path))
        else:
            if not m.target:
                raise ConfigError("command sink needs a 'target' argv")
            argv = [m.target] if isinstance(m.target, str) else list(m.target)
            sinks.append(CommandSink(argv))
    return sinks


def build_pipeline_config(model: RunConfigModel) -> PipelineConfig:
    try:
        cameras = [
            CameraConfig(c.id, _build_intrinsics(c.intrinsics), _build_pose(c.pose))
            for c in model.cameras
        ]
        zones = [
            Zone(z.id, np.asarray(z.footprint, dtype=np.float64),
                 (z.z_range[0], z.z_range[1]), z.on_exit_alarm)
            for z in model.zones
        ]
        rules = [_build_rule(r) for r in model.rules]
        zone_ids = {z.id for z in zones}
        for rule in rules:
            if rule.kind is RuleKind.ZONE_OCCUPANCY and rule.zone_id not in zone_ids:
                raise ConfigError(
                    f"rule {rule.id}: zone_id '{rule.zone_id}' is not a defined zone"
                )
        return PipelineConfig(
            cameras=cameras,
            sync_window=model.sync_window_s,
            fusion=FusionParams(
                voxel_size=model.fusion.voxel_size,
                merge_radius=model.fusion.merge_radius,
                cloud_stride=model.fusion.cloud_stride,
            ),
            tracker=TrackerParams(
                gate_distance=model.tracker.gate_distance,
                confirm_hits=model.tracker.confirm_hits,
                max_misses=model.tracker.max_misses,
                process_noise_accel=model.tracker.process_noise_accel,
                measurement_noise=model.tracker.measurement_noise,
            ),
            zones=zones,
            rules=rules,
        )
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def build_noise(model: NoiseModelConfig) -> NoiseModel:
    return NoiseModel(
        disparity_std=model.disparity_std,
        baseline=model.baseline,
        enabled=model.enabled,
    )


# --- Scene files -----------------------------------------------------------

class SphereShapeModel(_StrictModel):
    type: Literal["sphere"]
    center: list[float] = Field(min_length=3, max_length=3)
    radius: float


class BoxShapeModel(_StrictModel):
    type: Literal["box"]
    min: list[float] = Field(min_length=3, max_length=3)
    max: list[float] = Field(min_length=3, max_length=3)


class ActorModel(_StrictModel):
    class_id: int
    shape: SphereShapeModel | BoxShapeModel
    trajectory: list[list[float]] | None = None  # [t, x, y, z] knots


class SceneCameraModel(_StrictModel):
    intrinsics: IntrinsicsModel
    pose: PoseModel


class SceneModel(_StrictModel):
    duration: float
    frame_rate: float
    actors: list[ActorModel] = []
    cameras: list[SceneCameraModel] = []
    noise: NoiseModelConfig = NoiseModelConfig()


def parse_scene(doc: dict, source: str = "scene") -> SceneModel:
    try:
        return SceneModel.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc, source)) from exc


def load_scene_file(path: str | Path) -> SceneModel:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"scene file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except ValueError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    return parse_scene(doc, source=str(p))


def build_scene(model: SceneModel,
                fallback_cameras: list[CameraConfig] | None = None) -> Scene:
    """Build a Scene; cameras default to the run config's when absent."""
    try:
        actors = []
        for a in model.actors:
            if isinstance(a.shape, SphereShapeModel):
                shape: Sphere | Box = Sphere(np.asarray(a.shape.center), a.shape.radius)
            else:
                shape = Box(np.asarray(a.shape.min), np.asarray(a.shape.max))
            trajectory = None
            if a.trajectory is not None:
                trajectory = []
                for knot in a.trajectory:
                    if len(knot) != 4:
                        raise ConfigError("trajectory knots must be [t, x, y, z]")
                    trajectory.append((float(knot[0]), np.asarray(knot[1:4], dtype=np.float64)))
            actors.append(Actor(shape=shape, class_id=a.class_id, trajectory=trajectory))

        if model.cameras:
            cameras = [
                SceneCamera(_build_intrinsics(c.intrinsics), _build_pose(c.pose))
                for c in model.cameras
            ]
        elif fallback_cameras:
            cameras = [SceneCamera(c.intrinsics, c.pose) for c in fallback_cameras]
        else:
            raise ConfigError("scene defines no cameras and no config cameras were given")
        return Scene(actors=actors, cameras=cameras,
                     duration=model.duration, frame_rate=model.frame_rate)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
