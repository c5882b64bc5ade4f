"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PixelModel(StrictModel):
    u: float
    v: float


class PointModel(StrictModel):
    x: float
    y: float
    z: float


class IntrinsicsBody(StrictModel):
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_min: float = 0.2
    depth_max: float = 20.0


class BackprojectRequest(StrictModel):
    pixel: PixelModel
    depth: float
    intrinsics: IntrinsicsBody


class BackprojectResponse(StrictModel):
    point: PointModel


class ProjectRequest(StrictModel):
    point: PointModel
    intrinsics: IntrinsicsBody


class ProjectResponse(StrictModel):
    pixel: PixelModel
    depth: float


class CorrespondencePair(StrictModel):
    source: list[float] = Field(min_length=3, max_length=3)
    target: list[float] = Field(min_length=3, max_length=3)


class CalibrateRequest(StrictModel):
    pairs: list[CorrespondencePair]


class CalibrateResponse(StrictModel):
    rotation: list[float]
    translation: list[float]
    rms_residual: float


class SessionCreateRequest(StrictModel):
    config: dict


class SessionCreateResponse(StrictModel):
    session_id: str


class DetectionBody(StrictModel):
    class_id: int
    conf: float = 1.0
    bbox: list[float] = Field(min_length=4, max_length=4)


class CameraFrameBody(StrictModel):
    camera_id: int
    depth_b64: str  # base64-encoded DPT1 blob
    detections: list[DetectionBody] = []


class BundleRequest(StrictModel):
    t: float
    frames: list[CameraFrameBody]


class TrackBody(StrictModel):
    id: int
    class_id: int
    status: str
    pos: list[float]
    vel: list[float]
    hits: int
    misses: int


class EventBody(StrictModel):
    kind: str
    t: float
    track_id: int
    ref_id: str
    payload: dict


class BundleResponse(StrictModel):
    t: float
    completeness: str
    objects: int
    dropped_detections: int
    tracks: list[TrackBody]
    events: list[EventBody]
    born: list[int]
    dead: list[int]


class SessionStateResponse(StrictModel):
    session_id: str
    frames_processed: int
    tracks: list[TrackBody]


class EventsResponse(StrictModel):
    session_id: str
    events: list[EventBody]


class ReplayJobRequest(StrictModel):
    config_path: str
    input_dir: str
    output_dir: str
    realtime: bool = False


class SimulateJobRequest(StrictModel):
    scene_path: str
    config_path: str
    output_dir: str
    seed: int | None = None


class RunJobResponse(StrictModel):
    frames: int
    events: int
    dropped_detections: int
    events_path: str
    tracks_path: str
    stats_path: str


class BenchJobRequest(StrictModel):
    config_path: str
    output_dir: str
    frames: int = 300


class BenchJobResponse(StrictModel):
    frames_per_config: int
    results: list[dict]


class AccuracyJobRequest(StrictModel):
    output_dir: str
    experiment_path: str | None = None


class AccuracyJobResponse(StrictModel):
    conditions: list[str]
    csv_paths: list[str]
    ppm_paths: list[str]
    all_green: dict[str, bool]


class HealthResponse(StrictModel):
    status: str
    version: str
